use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineType {
    Bearing,
    Gearbox,
    Fan,
    SlideRail,
    Valve,
}

impl MachineType {
    pub const ALL: [MachineType; 5] = [
        MachineType::Bearing,
        MachineType::Gearbox,
        MachineType::Fan,
        MachineType::SlideRail,
        MachineType::Valve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MachineType::Bearing => "bearing",
            MachineType::Gearbox => "gearbox",
            MachineType::Fan => "fan",
            MachineType::SlideRail => "slide_rail",
            MachineType::Valve => "valve",
        }
    }

    pub fn index(self) -> usize {
        MachineType::ALL.iter().position(|&m| m == self).unwrap()
    }
}

impl fmt::Display for MachineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MachineType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MachineType::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown machine type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Normal,
    Anomalous,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Anomalous => "anomalous",
        }
    }
}

/// Which waveform transform an anomaly attribute selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Raises the fundamental ("over voltage").
    FrequencyShift,
    /// Adds periodic or irregular impact bursts ("... damage").
    Impulses,
    /// Adds band-limited noise ("contamination").
    BandNoise,
}

impl AnomalyKind {
    pub fn from_attribute(machine: MachineType, value: &str) -> Result<Self> {
        let v = value.to_ascii_lowercase();
        if v.contains("voltage") {
            Ok(AnomalyKind::FrequencyShift)
        } else if v.contains("damage") {
            Ok(AnomalyKind::Impulses)
        } else if v.contains("contamination") {
            Ok(AnomalyKind::BandNoise)
        } else {
            Err(Error::UnknownAnomaly { machine: machine.to_string(), attribute: value.to_string() })
        }
    }
}

/// Key of the attribute that names the anomaly.
pub const ANOMALY_KEY: &str = "anomaly";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub machine: MachineType,
    pub condition: Condition,
    /// Ordered key/value pairs; keys are unique.
    pub attributes: Vec<(String, String)>,
    pub seed: u64,
}

impl MetadataRecord {
    pub fn new(
        machine: MachineType,
        condition: Condition,
        attributes: &[(&str, &str)],
        seed: u64,
    ) -> Result<Self> {
        let record = MetadataRecord {
            machine,
            condition,
            attributes: attributes.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (k, _)) in self.attributes.iter().enumerate() {
            if self.attributes[..i].iter().any(|(other, _)| other == k) {
                return Err(Error::InvalidMetadata(format!("duplicate attribute key `{k}`")));
            }
        }
        let has_anomaly = self.get(ANOMALY_KEY).is_some();
        match self.condition {
            Condition::Anomalous if !has_anomaly => Err(Error::InvalidMetadata(
                "anomalous record needs an `anomaly` attribute".into(),
            )),
            Condition::Normal if has_anomaly => Err(Error::InvalidMetadata(
                "normal record carries an `anomaly` attribute".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attributes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn anomaly(&self) -> Option<&str> {
        self.get(ANOMALY_KEY)
    }

    /// Leading number of an attribute value such as `"24 krpm"` or `"2.3 (V)"`.
    pub fn numeric(&self, key: &str) -> Option<f64> {
        self.get(key)?.split_whitespace().next()?.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(MetadataRecord::new(MachineType::Fan, Condition::Normal, &[("model", "A")], 1).is_ok());
        let dup = MetadataRecord::new(MachineType::Fan, Condition::Normal, &[("model", "A"), ("model", "B")], 1);
        assert!(matches!(dup, Err(Error::InvalidMetadata(_))));
        let missing = MetadataRecord::new(MachineType::Fan, Condition::Anomalous, &[("model", "A")], 1);
        assert!(matches!(missing, Err(Error::InvalidMetadata(_))));
        let stray = MetadataRecord::new(MachineType::Fan, Condition::Normal, &[("anomaly", "over voltage")], 1);
        assert!(stray.is_err());
    }

    #[test]
    fn numeric_attributes() {
        let r = MetadataRecord::new(
            MachineType::Gearbox,
            Condition::Normal,
            &[("voltage", "2.3 (V)"), ("weight", "0 (g)"), ("model", "B")],
            0,
        )
        .unwrap();
        assert_eq!(r.numeric("voltage"), Some(2.3));
        assert_eq!(r.numeric("weight"), Some(0.0));
        assert_eq!(r.numeric("model"), None);
    }

    #[test]
    fn anomaly_kinds() {
        let m = MachineType::Fan;
        assert_eq!(AnomalyKind::from_attribute(m, "over voltage").unwrap(), AnomalyKind::FrequencyShift);
        assert_eq!(AnomalyKind::from_attribute(m, "axis damage").unwrap(), AnomalyKind::Impulses);
        assert_eq!(AnomalyKind::from_attribute(m, "contamination").unwrap(), AnomalyKind::BandNoise);
        match AnomalyKind::from_attribute(m, "gremlins") {
            Err(Error::UnknownAnomaly { attribute, .. }) => assert_eq!(attribute, "gremlins"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn machine_names_round_trip() {
        for m in MachineType::ALL {
            assert_eq!(m.name().parse::<MachineType>().unwrap(), m);
        }
        assert_eq!(MachineType::ALL.len(), 5);
    }
}
