//! Chain-spec documents.
//!
//! A document is TOML. Every quantity carrying a unit says so in its key:
//! `_s` for seconds, `_h` for hours, `_per_s` for rates. Unknown keys are
//! rejected so that a misspelt unit suffix cannot be silently ignored.
//!
//! ```toml
//! alpha_ext_per_s = 200.0
//! csd_target_s = 0.3
//! availability_target = 0.99999
//! c_max = 10
//! routing = "tandem"
//! thresholds = [2, 2, 2, 3]
//!
//! [[nodes]]
//! name = "P-CSCF"
//! mean_service_time_s = 0.008
//! cv = 1.25
//!
//! [layers.cnt]
//! mttf_h = 500.0
//! mttr_s = 2.0
//!
//! [search]
//! deployment = "colocated"
//! colocated = ["I-CSCF", "HSS"]
//!
//! [[deployment]]
//! id = "C1"
//! nodes = [[2, 2], [2, 2], [], []]
//! colocated = { first = "I-CSCF", second = "HSS", nrs = [[2, 3], [2, 3]] }
//! reference = { availability = 0.99999, csd_s = 0.0493, cost = 30 }
//! ```

use std::fs;
use std::path::Path;

use chainperf_core::deploy::{DeploymentConfig, LayerRate, LayerRates, SharedNrs};
use chainperf_core::qnet::{ChainSpec, NodeSpec};
use chainperf_core::search::{DeploymentType, SearchParams};
use chainperf_core::Allocation;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDocument {
    pub alpha_ext_per_s: f64,
    pub csd_target_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability_target: Option<f64>,
    #[serde(default = "default_c_max")]
    pub c_max: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub propagation_delay_s: f64,
    pub routing: Routing,
    /// Minimum containers per node used as availability thresholds. When
    /// absent, the greedy allocation result is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<u32>>,
    pub nodes: Vec<NodeDoc>,
    pub layers: LayersDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deployment: Vec<DeploymentDoc>,
}

fn default_c_max() -> u32 {
    10
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Routing {
    /// Only `"tandem"` is accepted.
    Named(String),
    Matrix(RoutingMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingMatrix {
    pub matrix: Vec<Vec<f64>>,
    pub entry: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub name: String,
    pub mean_service_time_s: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttf_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttf_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttr_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttr_s: Option<f64>,
}

fn hours(layer: &str, what: &str, h: Option<f64>, s: Option<f64>) -> Result<f64, CliError> {
    match (h, s) {
        (Some(h), None) => Ok(h),
        (None, Some(s)) => Ok(s / 3600.0),
        (None, None) => Err(CliError::Validation(format!(
            "layers.{layer}: missing field `{what}_h` or `{what}_s`"
        ))),
        (Some(_), Some(_)) => Err(CliError::Validation(format!(
            "layers.{layer}: give only one of `{what}_h` and `{what}_s`"
        ))),
    }
}

impl LayerDoc {
    fn rate(&self, layer: &str) -> Result<LayerRate, CliError> {
        Ok(LayerRate::new(
            hours(layer, "mttf", self.mttf_h, self.mttf_s)?,
            hours(layer, "mttr", self.mttr_h, self.mttr_s)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersDoc {
    pub cnt: LayerDoc,
    pub dck: LayerDoc,
    pub vm: LayerDoc,
    pub hyp: LayerDoc,
    pub phy: LayerDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentKind {
    Homogeneous,
    Colocated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDoc {
    #[serde(default = "default_kind")]
    pub deployment: DeploymentKind,
    /// Names of the two nodes that may share NRs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colocated: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_nrs_per_node: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_containers_per_nr: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<f64>,
}

fn default_kind() -> DeploymentKind {
    DeploymentKind::Homogeneous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColocatedDoc {
    pub first: String,
    pub second: String,
    /// `[first containers, second containers]` per shared NR.
    pub nrs: Vec<[u32; 2]>,
}

/// Published values a deployment is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csd_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentDoc {
    pub id: String,
    /// Containers per homogeneous NR, one list per node.
    pub nodes: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colocated: Option<ColocatedDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceDoc>,
}

impl ChainDocument {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let doc: Self = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("documents always serialize")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.chain()?.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.layer_rates()?
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(t) = &self.thresholds {
            if t.len() != self.nodes.len() {
                return Err(CliError::Validation(format!(
                    "thresholds: {} values for {} nodes",
                    t.len(),
                    self.nodes.len()
                )));
            }
        }
        if let Some(a) = self.availability_target {
            if !(0.0..=1.0).contains(&a) {
                return Err(CliError::Validation(format!("availability_target {a} outside [0, 1]")));
            }
        }
        for d in &self.deployment {
            if d.nodes.len() != self.nodes.len() {
                return Err(CliError::Validation(format!(
                    "deployment `{}`: {} node entries for {} nodes",
                    d.id,
                    d.nodes.len(),
                    self.nodes.len()
                )));
            }
            if let Some(c) = &d.colocated {
                self.node_index(&c.first)?;
                self.node_index(&c.second)?;
            }
        }
        if let Some(s) = &self.search {
            if let Some([a, b]) = &s.colocated {
                self.node_index(a)?;
                self.node_index(b)?;
            }
        }
        Ok(())
    }

    pub fn node_index(&self, name: &str) -> Result<usize, CliError> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| CliError::Validation(format!("unknown node `{name}`")))
    }

    pub fn chain(&self) -> Result<ChainSpec, CliError> {
        let nodes: Vec<NodeSpec> = self
            .nodes
            .iter()
            .map(|n| NodeSpec::new(n.name.clone(), n.mean_service_time_s, n.cv))
            .collect();
        let mut chain = ChainSpec::tandem(nodes, self.alpha_ext_per_s, self.csd_target_s, self.c_max);
        chain.propagation_delay = self.propagation_delay_s;
        match &self.routing {
            Routing::Named(name) if name == "tandem" => {}
            Routing::Named(name) => {
                return Err(CliError::Validation(format!(
                    "routing: expected \"tandem\" or {{ matrix, entry }}, got \"{name}\""
                )))
            }
            Routing::Matrix(m) => {
                chain.routing = m.matrix.clone();
                chain.entry = m.entry.clone();
            }
        }
        Ok(chain)
    }

    pub fn layer_rates(&self) -> Result<LayerRates, CliError> {
        Ok(LayerRates {
            cnt: self.layers.cnt.rate("cnt")?,
            dck: self.layers.dck.rate("dck")?,
            vm: self.layers.vm.rate("vm")?,
            hyp: self.layers.hyp.rate("hyp")?,
            phy: self.layers.phy.rate("phy")?,
        })
    }

    pub fn deployment_by_id(&self, id: &str) -> Result<&DeploymentDoc, CliError> {
        self.deployment
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CliError::Validation(format!("no deployment with id `{id}`")))
    }

    pub fn deployment_config(&self, d: &DeploymentDoc, thresholds: &Allocation) -> Result<DeploymentConfig, CliError> {
        let shared = match &d.colocated {
            Some(c) => Some(SharedNrs {
                first: self.node_index(&c.first)?,
                second: self.node_index(&c.second)?,
                nrs: c.nrs.iter().map(|&[a, b]| (a, b)).collect(),
            }),
            None => None,
        };
        Ok(DeploymentConfig {
            nodes: d.nodes.clone(),
            shared,
            thresholds: thresholds.clone(),
        })
    }

    /// Search parameters from the `[search]` table and the document's
    /// availability target.
    pub fn search_params(&self, thresholds: Allocation) -> Result<SearchParams, CliError> {
        let target = self.availability_target.ok_or_else(|| {
            CliError::Validation("missing field `availability_target` (needed by search)".into())
        })?;
        let mut params = SearchParams::new(target, thresholds);
        if let Some(s) = &self.search {
            if let Some(v) = s.max_nrs_per_node {
                params.max_nrs_per_node = v;
            }
            if let Some(v) = s.max_containers_per_nr {
                params.max_containers_per_nr = v;
            }
            if let Some(v) = s.m1 {
                params.m1 = v;
            }
            if let Some(v) = s.m2 {
                params.m2 = v;
            }
            params.deployment = match (s.deployment, &s.colocated) {
                (DeploymentKind::Homogeneous, _) => DeploymentType::Homogeneous,
                (DeploymentKind::Colocated, Some([a, b])) => DeploymentType::CoLocated {
                    first: self.node_index(a)?,
                    second: self.node_index(b)?,
                },
                (DeploymentKind::Colocated, None) => {
                    return Err(CliError::Validation(
                        "search: colocated deployment needs `colocated = [first, second]`".into(),
                    ))
                }
            };
        }
        Ok(params)
    }
}
