use std::path::Path;

use offload_core::{ApProfile, Error, MnoParams, Offer, Result, Scheme};
use serde::{Deserialize, Serialize};

/// On-disk scenario description.
///
/// ```json
/// {
///   "aps": [{"cost": 2, "quality": 0.2, "capacity": 5}, {"cost": 3, "quality": 0.3, "capacity": 5}],
///   "gain_coefficient": 50,
///   "scheme": "spb",
///   "offer": {"p": 2, "B": 10}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub aps: Vec<ApEntry>,
    pub gain_coefficient: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer: Option<OfferEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApEntry {
    pub cost: f64,
    pub quality: f64,
    pub capacity: f64,
    /// Defaults to `1/capacity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferEntry {
    pub p: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl From<Offer> for OfferEntry {
    fn from(offer: Offer) -> Self {
        OfferEntry {
            p: offer.salary_rate,
            b: offer.bonus,
        }
    }
}

impl OfferEntry {
    pub fn to_offer(self) -> Result<Offer> {
        Offer::new(self.p, self.b)
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn profiles(&self) -> Result<Vec<ApProfile>> {
        self.aps
            .iter()
            .enumerate()
            .map(|(id, ap)| match ap.penalty {
                Some(penalty) => {
                    ApProfile::with_penalty(id, ap.cost, ap.quality, ap.capacity, penalty)
                }
                None => ApProfile::new(id, ap.cost, ap.quality, ap.capacity),
            })
            .collect()
    }

    pub fn params(&self) -> Result<MnoParams> {
        MnoParams::new(self.gain_coefficient)
    }

    pub fn offer(&self) -> Result<Option<Offer>> {
        self.offer.map(OfferEntry::to_offer).transpose()
    }

    /// `Some((c, w, T))` when every AP is identical and there are at least two.
    pub fn homogeneous(&self) -> Option<(f64, f64, f64)> {
        let first = self.aps.first()?;
        let same = self.aps.iter().all(|ap| {
            ap.cost == first.cost
                && ap.quality == first.quality
                && ap.capacity == first.capacity
                && ap.penalty == first.penalty
        });
        (same && self.aps.len() >= 2).then_some((first.cost, first.quality, first.capacity))
    }
}

/// Parses `p=2,B=10` (keys case-insensitive, any order).
pub fn parse_offer(text: &str) -> std::result::Result<OfferEntry, String> {
    let (mut p, mut b) = (None, None);
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| format!("bad number `{}`: {e}", value.trim()))?;
        match key.trim() {
            "p" | "P" => p = Some(value),
            "b" | "B" => b = Some(value),
            other => return Err(format!("unknown offer key `{other}` (use p and B)")),
        }
    }
    match (p, b) {
        (Some(p), Some(b)) => Ok(OfferEntry { p, b }),
        _ => Err("an offer needs both p and B, e.g. p=2,B=10".into()),
    }
}

/// Parses `PxQ` grid dimensions.
pub fn parse_grid(text: &str) -> std::result::Result<(usize, usize), String> {
    let (p, q) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected PxQ, got `{text}`"))?;
    let p: usize = p
        .trim()
        .parse()
        .map_err(|e| format!("bad grid size `{p}`: {e}"))?;
    let q: usize = q
        .trim()
        .parse()
        .map_err(|e| format!("bad grid size `{q}`: {e}"))?;
    if p < 2 || q < 2 {
        return Err(format!("grid sizes must be >= 2, got {p}x{q}"));
    }
    Ok((p, q))
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|e| format!("bad number `{}`: {e}", x.trim()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file() {
        let text =
            r#"{"aps": [{"cost": 1, "quality": 0.5, "capacity": 2}], "gain_coefficient": 10}"#;
        let file = ScenarioFile::parse(text).unwrap();
        assert_eq!(file.aps.len(), 1);
        assert_eq!(file.scheme, None);
        assert_eq!(file.profiles().unwrap()[0].penalty, 0.5);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{"aps": [], "gain_coefficient": 10, "lambda": 3}"#;
        let err = ScenarioFile::parse(text).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
        let text = r#"{"aps": [{"cost": 1, "quality": 0.5, "capacity": 2, "colour": 1}], "gain_coefficient": 10}"#;
        assert!(ScenarioFile::parse(text).is_err());
    }

    #[test]
    fn error_mentions_line() {
        let text = "{\n  \"aps\": [],\n  \"gain_coefficient\": \"ten\"\n}";
        let err = ScenarioFile::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn offer_and_scheme_round_trip() {
        let text = r#"{"aps": [{"cost": 1, "quality": 0.5, "capacity": 2, "penalty": 0.1}],
                       "gain_coefficient": 10, "scheme": "bonus", "offer": {"p": 0, "B": 3}}"#;
        let file = ScenarioFile::parse(text).unwrap();
        assert_eq!(file.scheme, Some(Scheme::BonusOnly));
        let again = ScenarioFile::parse(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(again, file);
    }

    #[test]
    fn offer_strings() {
        assert_eq!(
            parse_offer("p=2,B=10").unwrap(),
            OfferEntry { p: 2.0, b: 10.0 }
        );
        assert_eq!(
            parse_offer("B=1, p=0.5").unwrap(),
            OfferEntry { p: 0.5, b: 1.0 }
        );
        assert!(parse_offer("p=2").is_err());
        assert!(parse_offer("q=2,B=1").is_err());
    }

    #[test]
    fn grid_strings() {
        assert_eq!(parse_grid("101x51").unwrap(), (101, 51));
        assert!(parse_grid("1x5").is_err());
        assert!(parse_grid("10").is_err());
    }

    #[test]
    fn homogeneous_detection() {
        let text = r#"{"aps": [{"cost": 1, "quality": 0.5, "capacity": 2}, {"cost": 1, "quality": 0.5, "capacity": 2}], "gain_coefficient": 10}"#;
        assert_eq!(
            ScenarioFile::parse(text).unwrap().homogeneous(),
            Some((1.0, 0.5, 2.0))
        );
    }
}
