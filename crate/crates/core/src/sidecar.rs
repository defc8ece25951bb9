//! The JSON sidecar that travels next to DIMACS files: markings, partial
//! assignments and seeds. All keys are optional; variables are 1-based.
//!
//! ```json
//! {"marking": [1, 4], "assignment": {"2": "T", "5": "F"}, "seed": 7}
//! ```

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cnf::{Marking, PartialAssignment};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Sidecar {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marking: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Sidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn with_marking(mut self, marking: &Marking) -> Self {
        self.marking = Some(marking.marked().iter().copied().collect());
        self
    }

    pub fn with_assignment(mut self, assignment: &PartialAssignment) -> Self {
        self.assignment = Some(
            assignment
                .iter()
                .map(|(v, b)| (v.to_string(), if b { "T" } else { "F" }.to_string()))
                .collect(),
        );
        self
    }

    pub fn marking(&self) -> Option<Marking> {
        self.marking
            .as_ref()
            .map(|vars| Marking::new(vars.iter().copied().collect()))
    }

    pub fn assignment(&self) -> Result<Option<PartialAssignment>> {
        let Some(map) = &self.assignment else {
            return Ok(None);
        };
        let mut out = PartialAssignment::new();
        for (key, value) in map {
            let var: u32 = key.parse().map_err(|_| Error::InvalidParameter {
                what: "assignment",
                why: format!("bad variable key {key:?}"),
            })?;
            let b = match value.as_str() {
                "T" | "t" | "true" => true,
                "F" | "f" | "false" => false,
                other => {
                    return Err(Error::InvalidParameter {
                        what: "assignment",
                        why: format!("bad value {other:?} for variable {var}"),
                    })
                }
            };
            out.set(var, b);
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let marking = Marking::new([1u32, 4].into_iter().collect());
        let assignment = PartialAssignment::from_pairs([(2, true), (5, false)]);
        let sidecar = Sidecar::default()
            .with_marking(&marking)
            .with_assignment(&assignment);
        let text = sidecar.to_json();
        let back = Sidecar::from_json(&text).unwrap();
        assert_eq!(back, sidecar);
        assert_eq!(back.marking().unwrap(), marking);
        assert_eq!(back.assignment().unwrap().unwrap(), assignment);
    }

    #[test]
    fn keys_are_optional() {
        let s = Sidecar::from_json("{\"seed\": 3}").unwrap();
        assert_eq!(s.seed, Some(3));
        assert!(s.marking.is_none());
        assert!(s.assignment().unwrap().is_none());
    }
}
