//! JSON file formats: models, policies, model classes and reward overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HomdpError, Result};
use crate::model::{
    validate_model, EmissionTable, HistoryKey, HomdpModel, RewardTable, TransitionTable, PROB_TOL,
};
use crate::policy::TablePolicy;

pub const SCHEMA_VERSION: u32 = 1;

/// Rows whose sum is this close to 1 are kept bit-for-bit; rows further off
/// but within [`PROB_TOL`] are renormalized.
const EXACT_SUM_TOL: f64 = 1e-12;

#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub X: usize,
    pub Y: usize,
    pub A: usize,
    pub H: usize,
    pub rho: Vec<f64>,
    pub trans: Vec<Vec<Vec<f64>>>,
    pub emit: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
}

impl From<&HomdpModel> for ModelFile {
    fn from(m: &HomdpModel) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            X: m.num_states(),
            Y: m.num_obs(),
            A: m.num_actions(),
            H: m.horizon,
            rho: m.rho.clone(),
            trans: m.trans.to_nested(),
            emit: m.emit.to_nested(),
            reward: m.reward.to_nested(),
        }
    }
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(HomdpError::Schema(format!(
            "schema_version {version} unsupported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn renormalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    let off = (sum - 1.0).abs();
    if off > EXACT_SUM_TOL && off <= PROB_TOL && sum > 0.0 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
}

impl ModelFile {
    pub fn into_model(mut self) -> Result<HomdpModel> {
        check_schema(self.schema_version)?;
        let dims_ok = self.rho.len() == self.X
            && self.trans.len() == self.X
            && self.trans.iter().all(|r| r.len() == self.A && r.iter().all(|q| q.len() == self.X))
            && self.emit.len() == self.X
            && self.emit.iter().all(|r| r.len() == self.Y)
            && self.reward.len() == self.X
            && self.reward.iter().all(|r| r.len() == self.A);
        if !dims_ok {
            return Err(HomdpError::DimensionMismatch(format!(
                "table shapes do not match X={}, Y={}, A={}",
                self.X, self.Y, self.A
            )));
        }
        renormalize(&mut self.rho);
        self.trans.iter_mut().flatten().for_each(|r| renormalize(r));
        self.emit.iter_mut().for_each(|r| renormalize(r));
        let m = HomdpModel {
            horizon: self.H,
            rho: self.rho,
            trans: TransitionTable::from_nested(&self.trans)?,
            emit: EmissionTable::from_nested(&self.emit)?,
            reward: RewardTable::from_nested(&self.reward)?,
        };
        let violations = validate_model(&m);
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(HomdpError::InvalidModel(violations))
        }
    }
}

pub fn parse_model(text: &str) -> Result<HomdpModel> {
    serde_json::from_str::<ModelFile>(text)?.into_model()
}

pub fn model_to_json(m: &HomdpModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from(m)).expect("model serializes")
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HomdpModel> {
    parse_model(&fs::read_to_string(path)?)
}

pub fn save_model(path: impl AsRef<Path>, m: &HomdpModel) -> Result<()> {
    fs::write(path, model_to_json(m))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Hex of the canonical history key.
    pub key: String,
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
    pub action: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub num_obs: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub fallback_action: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub entries: Vec<PolicyEntry>,
}

impl PolicyFile {
    pub fn from_policy(
        policy: &TablePolicy,
        num_obs: usize,
        num_actions: usize,
        horizon: usize,
        value: Option<f64>,
    ) -> Self {
        let entries = policy
            .entries()
            .into_iter()
            .map(|(key, action)| {
                let h = key.decode().expect("table keys are canonical");
                PolicyEntry { key: key.to_hex(), obs: h.obs, acts: h.acts, action }
            })
            .collect();
        PolicyFile {
            schema_version: SCHEMA_VERSION,
            num_obs,
            num_actions,
            horizon,
            fallback_action: policy.fallback(),
            value,
            entries,
        }
    }

    pub fn into_policy(self) -> Result<TablePolicy> {
        check_schema(self.schema_version)?;
        if self.fallback_action >= self.num_actions {
            return Err(HomdpError::IdOutOfRange {
                kind: "action",
                id: self.fallback_action,
                size: self.num_actions,
            });
        }
        let mut p = TablePolicy::with_fallback(self.fallback_action);
        for e in self.entries {
            let key = HistoryKey::from_hex(&e.key)?;
            let h = key.decode()?;
            h.validate(self.num_obs, self.num_actions)?;
            if e.action >= self.num_actions {
                return Err(HomdpError::IdOutOfRange { kind: "action", id: e.action, size: self.num_actions });
            }
            p.insert_key(key, e.action);
        }
        Ok(p)
    }
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<TablePolicy> {
    serde_json::from_str::<PolicyFile>(&fs::read_to_string(path)?)?.into_policy()
}

/// `{transitions: [[X][A][X], ...], emissions: [[X][Y], ...]}`. Either list
/// may be omitted when a consumer needs only the other.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClassesFile {
    #[serde(default)]
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub emissions: Vec<Vec<Vec<f64>>>,
}

impl ClassesFile {
    pub fn from_tables(transitions: &[TransitionTable], emissions: &[EmissionTable]) -> Self {
        ClassesFile {
            transitions: transitions.iter().map(TransitionTable::to_nested).collect(),
            emissions: emissions.iter().map(EmissionTable::to_nested).collect(),
        }
    }

    pub fn tables(&self) -> Result<(Vec<TransitionTable>, Vec<EmissionTable>)> {
        let t = self
            .transitions
            .iter()
            .map(|t| TransitionTable::from_nested(t))
            .collect::<Result<Vec<_>>>()?;
        let o = self
            .emissions
            .iter()
            .map(|o| EmissionTable::from_nested(o))
            .collect::<Result<Vec<_>>>()?;
        Ok((t, o))
    }
}

pub fn load_classes(path: impl AsRef<Path>) -> Result<(Vec<TransitionTable>, Vec<EmissionTable>)> {
    serde_json::from_str::<ClassesFile>(&fs::read_to_string(path)?)?.tables()
}

/// `{"reward": [[X][A]]}`: replacement reward for planning. Entries must be
/// nonnegative; they may exceed 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardFile {
    pub reward: Vec<Vec<f64>>,
}

pub fn load_reward(path: impl AsRef<Path>) -> Result<RewardTable> {
    let f: RewardFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    RewardTable::from_nested(&f.reward)
}
