use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Haze colour families used when drawing random airlight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AirlightFamily {
    White,
    BlueGrey,
    Yellow,
    Grey,
    Sepia,
}

impl AirlightFamily {
    pub const ALL: [AirlightFamily; 5] = [
        AirlightFamily::White,
        AirlightFamily::BlueGrey,
        AirlightFamily::Yellow,
        AirlightFamily::Grey,
        AirlightFamily::Sepia,
    ];

    /// Per-channel jitter half-width applied around [`base`](Self::base).
    pub const JITTER: f64 = 0.05;

    pub fn base(self) -> [f64; 3] {
        match self {
            AirlightFamily::White => [0.95, 0.95, 0.95],
            AirlightFamily::BlueGrey => [0.75, 0.78, 0.82],
            AirlightFamily::Yellow => [0.85, 0.80, 0.60],
            AirlightFamily::Grey => [0.70, 0.70, 0.70],
            AirlightFamily::Sepia => [0.70, 0.60, 0.45],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AirlightFamily::White => "white",
            AirlightFamily::BlueGrey => "blue-grey",
            AirlightFamily::Yellow => "yellow",
            AirlightFamily::Grey => "grey",
            AirlightFamily::Sepia => "sepia",
        }
    }
}

impl std::str::FromStr for AirlightFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        AirlightFamily::ALL
            .into_iter()
            .find(|f| f.name() == key || (key == "blue-gray" && *f == AirlightFamily::BlueGrey) || (key == "gray" && *f == AirlightFamily::Grey))
            .ok_or_else(|| Error::InvalidInput(format!("unknown airlight family '{s}'")))
    }
}

/// Draws an airlight colour from `family` with the default jitter.
pub fn sample_airlight(family: AirlightFamily, seed: u64) -> [f64; 3] {
    sample_airlight_with_jitter(family, AirlightFamily::JITTER, seed)
}

/// Uniform draw in `base ± jitter` per channel, clipped to `[0, 1]`.
pub fn sample_airlight_with_jitter(family: AirlightFamily, jitter: f64, seed: u64) -> [f64; 3] {
    let base = family.base();
    if jitter <= 0.0 {
        return base;
    }
    let mut rng = rng::stream(seed, 0xA1);
    base.map(|b| (b + rng.gen_range(-jitter..=jitter)).clamp(0.0, 1.0))
}
