use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::Mat;

/// Coarse ownership of a parameter, used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    RelQ,
    Decoder,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::RelQ => "relq",
            Group::Decoder => "decoder",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "encoder" => Ok(Group::Encoder),
            "relq" | "relq-former" | "relq_former" => Ok(Group::RelQ),
            "decoder" => Ok(Group::Decoder),
            other => Err(format!("unknown module `{other}` (expected encoder, relq or decoder)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Mat,
}

/// Flat, ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    /// Normal(0, std²) initialized tensor.
    pub fn normal(
        &mut self,
        name: impl Into<String>,
        group: Group,
        shape: (usize, usize),
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = Mat::from_shape_fn(shape, |_| { let z: f64 = StandardNormal.sample(rng); z * std });
        self.insert(name, group, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, group: Group, shape: (usize, usize)) -> ParamId {
        self.insert(name, group, Mat::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, group: Group, shape: (usize, usize)) -> ParamId {
        self.insert(name, group, Mat::ones(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
