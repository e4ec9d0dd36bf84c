use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Case, CaseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDocument {
    pub subproblems: Vec<SubproblemDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubproblemDocument {
    pub name: String,
    pub networks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    pub name: String,
    /// Network indices into `Case::networks`, ascending.
    pub networks: Vec<usize>,
}

/// Where the two ends of a coupling port live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortPlacement {
    pub coupling: usize,
    pub t_sub: usize,
    pub d_sub: usize,
}

impl PortPlacement {
    pub fn is_torn(&self) -> bool {
        self.t_sub != self.d_sub
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub subproblems: Vec<SubproblemSpec>,
    pub ports: Vec<PortPlacement>,
    pub warnings: Vec<String>,
}

/// Reads a partition file and checks it against `case`.
pub fn load_partition(path: impl AsRef<Path>, case: &Case) -> Result<Partition, CaseError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CaseError::NotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: PartitionDocument =
        serde_json::from_str(&text).map_err(|e| CaseError::Schema(e.to_string()))?;
    Partition::from_document(&doc, case)
}

impl Partition {
    /// One subproblem per network.
    pub fn per_network(case: &Case) -> Partition {
        let subproblems = case
            .networks
            .iter()
            .enumerate()
            .map(|(n, net)| SubproblemSpec {
                name: net.name.clone(),
                networks: vec![n],
            })
            .collect();
        Partition::assemble(case, subproblems)
    }

    /// Everything in one subproblem.
    pub fn centralized(case: &Case) -> Partition {
        let sub = SubproblemSpec {
            name: "all".into(),
            networks: (0..case.networks.len()).collect(),
        };
        let mut p = Partition::assemble(case, vec![sub]);
        p.warnings.clear();
        p
    }

    pub fn from_document(doc: &PartitionDocument, case: &Case) -> Result<Partition, CaseError> {
        let mut owner = vec![None; case.networks.len()];
        let mut names = BTreeSet::new();
        let mut subproblems = Vec::with_capacity(doc.subproblems.len());
        for (s, sd) in doc.subproblems.iter().enumerate() {
            if !names.insert(sd.name.clone()) {
                return Err(CaseError::Partition(format!("subproblem name \"{}\" used twice", sd.name)));
            }
            if sd.networks.is_empty() {
                return Err(CaseError::Partition(format!("subproblem \"{}\" owns no network", sd.name)));
            }
            let mut nets = Vec::with_capacity(sd.networks.len());
            for name in &sd.networks {
                let n = case.network_index(name).ok_or_else(|| {
                    CaseError::Partition(format!("subproblem \"{}\" names unknown network \"{name}\"", sd.name))
                })?;
                if let Some(prev) = owner[n] {
                    let prev: &SubproblemDocument = &doc.subproblems[prev];
                    return Err(CaseError::Partition(format!(
                        "network \"{name}\" assigned twice (\"{}\" and \"{}\")",
                        prev.name, sd.name
                    )));
                }
                owner[n] = Some(s);
                nets.push(n);
            }
            nets.sort_unstable();
            subproblems.push(SubproblemSpec {
                name: sd.name.clone(),
                networks: nets,
            });
        }
        if let Some(n) = owner.iter().position(|o| o.is_none()) {
            return Err(CaseError::Partition(format!(
                "network \"{}\" is not assigned to any subproblem",
                case.networks[n].name
            )));
        }
        Ok(Partition::assemble(case, subproblems))
    }

    fn assemble(case: &Case, subproblems: Vec<SubproblemSpec>) -> Partition {
        let owner = |net: usize| {
            subproblems
                .iter()
                .position(|s| s.networks.contains(&net))
                .expect("every network is owned")
        };
        let mut warnings = Vec::new();
        let ports: Vec<PortPlacement> = case
            .couplings
            .iter()
            .enumerate()
            .map(|(k, c)| PortPlacement {
                coupling: k,
                t_sub: owner(c.t_network),
                d_sub: owner(c.d_network),
            })
            .collect();
        for p in &ports {
            if !p.is_torn() {
                let c = &case.couplings[p.coupling];
                warnings.push(format!(
                    "degenerate tearing: coupling {} ({} - {}) lies inside subproblem \"{}\"",
                    p.coupling,
                    case.networks[c.t_network].buses[c.t_bus].id,
                    case.networks[c.d_network].buses[c.d_bus].id,
                    subproblems[p.t_sub].name
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Partition {
            subproblems,
            ports,
            warnings,
        }
    }

    pub fn subproblem_of_network(&self, net: usize) -> usize {
        self.subproblems
            .iter()
            .position(|s| s.networks.contains(&net))
            .expect("every network is owned")
    }

    pub fn torn_ports(&self) -> impl Iterator<Item = &PortPlacement> {
        self.ports.iter().filter(|p| p.is_torn())
    }
}
