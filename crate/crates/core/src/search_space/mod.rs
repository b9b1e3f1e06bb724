//! Architecture search spaces: genotypes, binary encodings, sampling,
//! enumeration and per-architecture cost statistics.
//!
//! Three families are supported:
//!
//! * [`SpaceKind::MbV2Like`]: staged inverted-residual blocks with a searchable
//!   depth per stage plus trailing fixed-depth blocks. A block is described by
//!   its kernel size and expansion ratio; blocks past a stage's depth are
//!   inactive.
//! * [`SpaceKind::FbNetLike`]: a flat list of blocks, each picking one of a
//!   list of named candidates, the last of which is `skip`.
//! * [`SpaceKind::CellLike`]: a single cell whose edges each pick one operator.
//!
//! Encodings are one-hot per block position with a trailing constant bias
//! feature. Inactive blocks (beyond a stage's depth, or skipped) encode as an
//! all-zero group.

mod backbone;

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneStage, BlockShape};

use crate::error::{io_err, Error, Result};
use crate::rng::rng_for;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;
const DOCUMENT_VERSION: u32 = 1;

pub const CELL_OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    MbV2Like,
    FbNetLike,
    CellLike,
}

/// One candidate for a block position or cell edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<u32>,
}

impl Choice {
    pub fn conv(kernel: u32, expansion: u32) -> Self {
        Self {
            label: format!("k{kernel}_e{expansion}"),
            kernel: Some(kernel),
            expansion: Some(expansion),
            groups: None,
        }
    }

    fn grouped(kernel: u32, expansion: u32, groups: u32) -> Self {
        Self {
            label: format!("k{kernel}_e{expansion}_g{groups}"),
            groups: Some(groups),
            ..Self::conv(kernel, expansion)
        }
    }

    pub fn named(label: &str) -> Self {
        Self {
            label: label.to_string(),
            kernel: None,
            expansion: None,
            groups: None,
        }
    }

    pub fn is_skip(&self) -> bool {
        self.label == "skip"
    }
}

/// FLOPs and bytes moved for one operator choice at one position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub flops: f64,
    pub bytes: f64,
}

/// A point in a search space.
///
/// The JSON form mirrors the usual evolutionary-search individual, e.g.
/// `{"kernel_size": [...], "expansion_ratio": [...], "depth": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Genotype {
    MbV2 {
        kernel_size: Vec<u32>,
        expansion_ratio: Vec<u32>,
        depth: Vec<u32>,
    },
    FbNet {
        block_choice: Vec<u32>,
    },
    Cell {
        edge_op: Vec<u32>,
    },
}

impl Genotype {
    pub fn kind(&self) -> SpaceKind {
        match self {
            Genotype::MbV2 { .. } => SpaceKind::MbV2Like,
            Genotype::FbNet { .. } => SpaceKind::FbNetLike,
            Genotype::Cell { .. } => SpaceKind::CellLike,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genotype serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// All gene values flattened in a fixed order.
    pub fn genes(&self) -> Vec<u32> {
        match self {
            Genotype::MbV2 {
                kernel_size,
                expansion_ratio,
                depth,
            } => kernel_size
                .iter()
                .chain(expansion_ratio)
                .chain(depth)
                .copied()
                .collect(),
            Genotype::FbNet { block_choice } => block_choice.clone(),
            Genotype::Cell { edge_op } => edge_op.clone(),
        }
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Binary feature vector of length K followed by a constant bias feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchEncoding {
    features: Vec<f64>,
}

impl ArchEncoding {
    /// Wraps a raw feature vector; the last entry is the bias feature.
    pub fn from_features(features: Vec<f64>) -> Self {
        Self { features }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn bias(&self) -> f64 {
        self.features.last().copied().unwrap_or(0.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.features
    }
}

/// Whole-architecture cost statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ArchStats {
    pub flops: f64,
    pub bytes: f64,
    pub operational_intensity: f64,
}

/// Definition of a search space and its cost table.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpaceSpec {
    id: String,
    kind: SpaceKind,
    stage_count: usize,
    max_blocks_per_stage: usize,
    fixed_block_count: usize,
    depth_choices: Vec<u32>,
    choices: Vec<Choice>,
    cell_edge_count: usize,
    cost_table: Vec<Vec<OpCost>>,
    enumeration_cap: u64,
}

#[derive(Serialize, Deserialize)]
struct SpaceDocument {
    version: u32,
    id: String,
    kind: SpaceKind,
    #[serde(default)]
    stages: usize,
    #[serde(default)]
    max_blocks_per_stage: usize,
    #[serde(default)]
    fixed_blocks: usize,
    #[serde(default)]
    depth_choices: Vec<u32>,
    #[serde(default)]
    cell_edge_count: usize,
    choices: Vec<Choice>,
    #[serde(default = "default_cap")]
    enumeration_cap: u64,
    /// `[position, choice, flops, bytes]` rows.
    cost_table: Vec<(usize, usize, f64, f64)>,
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP
}

impl SearchSpaceSpec {
    /// 5 stages of up to 4 blocks plus one fixed block; kernel {3,5,7} x
    /// expansion {3,4,6}; stage depth {2,3,4}.
    pub fn mbv2_like() -> Self {
        Self::mbv2_with_backbone(&Backbone::mbv2_default()).expect("default space is valid")
    }

    pub fn mbv2_with_backbone(backbone: &Backbone) -> Result<Self> {
        let mut choices = Vec::new();
        for k in [3, 5, 7] {
            for e in [3, 4, 6] {
                choices.push(Choice::conv(k, e));
            }
        }
        let cost_table = backbone.layerwise_table(&choices)?;
        Self::new(SearchSpaceSpec {
            id: "mbv2".into(),
            kind: SpaceKind::MbV2Like,
            stage_count: 5,
            max_blocks_per_stage: 4,
            fixed_block_count: 1,
            depth_choices: vec![2, 3, 4],
            choices,
            cell_edge_count: 0,
            cost_table,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    /// 22 blocks, 8 convolution candidates plus `skip`.
    pub fn fbnet_like() -> Self {
        let choices = vec![
            Choice::conv(3, 1),
            Choice::grouped(3, 1, 2),
            Choice::conv(3, 3),
            Choice::conv(3, 6),
            Choice::conv(5, 1),
            Choice::grouped(5, 1, 2),
            Choice::conv(5, 3),
            Choice::conv(5, 6),
            Choice::named("skip"),
        ];
        let cost_table = Backbone::fbnet_default()
            .layerwise_table(&choices)
            .expect("shipped backbone");
        Self::new(SearchSpaceSpec {
            id: "fbnet".into(),
            kind: SpaceKind::FbNetLike,
            stage_count: 0,
            max_blocks_per_stage: 0,
            fixed_block_count: 22,
            depth_choices: Vec::new(),
            choices,
            cell_edge_count: 0,
            cost_table,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
        .expect("default space is valid")
    }

    /// Cell space with `edges` edges and five operator candidates per edge.
    pub fn cell_like(edges: usize) -> Self {
        let backbone = Backbone::cell_default();
        let choices: Vec<Choice> = CELL_OPS.iter().map(|op| Choice::named(op)).collect();
        let row: Vec<OpCost> = CELL_OPS
            .iter()
            .map(|op| backbone.cell_op(op).expect("known operator"))
            .collect();
        Self::new(SearchSpaceSpec {
            id: format!("cell{edges}"),
            kind: SpaceKind::CellLike,
            stage_count: 0,
            max_blocks_per_stage: 0,
            fixed_block_count: 0,
            depth_choices: Vec::new(),
            choices,
            cell_edge_count: edges,
            cost_table: vec![row; edges],
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
        .expect("default space is valid")
    }

    /// Resolves a built-in space by name: `mbv2`, `fbnet`, `cell`/`cell6`, `cell4`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "mbv2" => Some(Self::mbv2_like()),
            "fbnet" => Some(Self::fbnet_like()),
            "cell" | "cell6" => Some(Self::cell_like(6)),
            "cell4" => Some(Self::cell_like(4)),
            _ => None,
        }
    }

    fn new(spec: SearchSpaceSpec) -> Result<Self> {
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpace(m));
        if self.choices.is_empty() {
            return bad("no choices".into());
        }
        match self.kind {
            SpaceKind::MbV2Like => {
                if self.stage_count == 0 || self.max_blocks_per_stage == 0 {
                    return bad("MbV2Like needs at least one stage".into());
                }
                if self.depth_choices.is_empty()
                    || self
                        .depth_choices
                        .iter()
                        .any(|&d| d == 0 || d as usize > self.max_blocks_per_stage)
                {
                    return bad("depth choices must lie in 1..=max_blocks_per_stage".into());
                }
                if self.choices.iter().any(|c| c.kernel.is_none() || c.expansion.is_none()) {
                    return bad("MbV2Like choices need kernel and expansion".into());
                }
                let (ks, es) = (self.kernels(), self.expansions());
                if ks.len() * es.len() != self.choices.len()
                    || ks
                        .iter()
                        .any(|&k| es.iter().any(|&e| self.choice_index(k, e).is_none()))
                {
                    return bad("MbV2Like choices must form the full kernel x expansion product".into());
                }
            }
            SpaceKind::FbNetLike => {
                let skips = self.choices.iter().filter(|c| c.is_skip()).count();
                if skips > 1 || (skips == 1 && !self.choices.last().is_some_and(Choice::is_skip)) {
                    return bad("FbNetLike allows one skip candidate, listed last".into());
                }
                if self.fixed_block_count == 0 {
                    return bad("FbNetLike needs at least one block".into());
                }
            }
            SpaceKind::CellLike => {
                if self.cell_edge_count == 0 {
                    return bad("CellLike needs at least one edge".into());
                }
            }
        }
        if self.cost_table.len() != self.positions() {
            return bad(format!(
                "cost table has {} positions, space has {}",
                self.cost_table.len(),
                self.positions()
            ));
        }
        for (p, row) in self.cost_table.iter().enumerate() {
            if row.len() != self.choices.len() {
                return bad(format!("cost table position {p} has {} entries", row.len()));
            }
            if let Some(c) = row
                .iter()
                .position(|c| !(c.flops > 0.0 && c.bytes > 0.0 && c.flops.is_finite() && c.bytes.is_finite()))
            {
                return bad(format!("cost entry ({p}, {c}) is not strictly positive"));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn stage_count(&self) -> usize {
        self.stage_count
    }

    pub fn max_blocks_per_stage(&self) -> usize {
        self.max_blocks_per_stage
    }

    pub fn depth_choices(&self) -> &[u32] {
        &self.depth_choices
    }

    pub fn enumeration_cap(&self) -> u64 {
        self.enumeration_cap
    }

    pub fn with_enumeration_cap(mut self, cap: u64) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn cost_table(&self) -> &[Vec<OpCost>] {
        &self.cost_table
    }

    pub fn with_cost_table(mut self, table: Vec<Vec<OpCost>>) -> Result<Self> {
        self.cost_table = table;
        self.check()?;
        Ok(self)
    }

    pub fn cost(&self, position: usize, choice: usize) -> OpCost {
        self.cost_table[position][choice]
    }

    /// Number of searchable block positions (or cell edges).
    pub fn positions(&self) -> usize {
        match self.kind {
            SpaceKind::CellLike => self.cell_edge_count,
            _ => self.stage_count * self.max_blocks_per_stage + self.fixed_block_count,
        }
    }

    /// Width of one position's one-hot group.
    pub fn group_width(&self) -> usize {
        match self.kind {
            SpaceKind::FbNetLike if self.skip_index().is_some() => self.choices.len() - 1,
            _ => self.choices.len(),
        }
    }

    /// K: number of searchable features.
    pub fn feature_len(&self) -> usize {
        self.positions() * self.group_width()
    }

    /// K + 1, including the bias feature.
    pub fn encoding_len(&self) -> usize {
        self.feature_len() + 1
    }

    fn skip_index(&self) -> Option<usize> {
        self.choices.iter().position(Choice::is_skip)
    }

    /// Distinct kernel sizes, ascending.
    pub fn kernels(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.choices.iter().filter_map(|c| c.kernel).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Distinct expansion ratios, ascending.
    pub fn expansions(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.choices.iter().filter_map(|c| c.expansion).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn choice_index(&self, kernel: u32, expansion: u32) -> Option<usize> {
        self.choices
            .iter()
            .position(|c| c.kernel == Some(kernel) && c.expansion == Some(expansion))
    }

    /// Feature index of `choice` at `position`, or `None` for a skip.
    pub fn feature_index(&self, position: usize, choice: usize) -> Option<usize> {
        if Some(choice) == self.skip_index() {
            return None;
        }
        Some(position * self.group_width() + choice)
    }

    pub fn validate(&self, g: &Genotype) -> Result<()> {
        self.active_choices(g).map(|_| ())
    }

    /// `(position, choice)` for every active block, in position order.
    pub fn active_choices(&self, g: &Genotype) -> Result<Vec<(usize, usize)>> {
        let invalid = |m: String| Err(Error::InvalidGenotype(m));
        let n = self.positions();
        match (self.kind, g) {
            (
                SpaceKind::MbV2Like,
                Genotype::MbV2 {
                    kernel_size,
                    expansion_ratio,
                    depth,
                },
            ) => {
                if kernel_size.len() != n || expansion_ratio.len() != n || depth.len() != self.stage_count {
                    return invalid(format!(
                        "expected {n} kernels, {n} expansions and {} depths",
                        self.stage_count
                    ));
                }
                if let Some(d) = depth.iter().find(|d| !self.depth_choices.contains(d)) {
                    return invalid(format!("depth {d} not in {:?}", self.depth_choices));
                }
                let mut active = Vec::new();
                for p in 0..n {
                    let choice = self
                        .choice_index(kernel_size[p], expansion_ratio[p])
                        .ok_or_else(|| {
                            Error::InvalidGenotype(format!(
                                "block {p}: (kernel {}, expansion {}) is not a candidate",
                                kernel_size[p], expansion_ratio[p]
                            ))
                        })?;
                    if self.mbv2_block_active(p, depth) {
                        active.push((p, choice));
                    }
                }
                Ok(active)
            }
            (SpaceKind::FbNetLike, Genotype::FbNet { block_choice }) => {
                if block_choice.len() != n {
                    return invalid(format!("expected {n} blocks, got {}", block_choice.len()));
                }
                let skip = self.skip_index();
                let mut active = Vec::new();
                for (p, &c) in block_choice.iter().enumerate() {
                    let c = c as usize;
                    if c >= self.choices.len() {
                        return invalid(format!("block {p}: choice {c} out of range"));
                    }
                    if Some(c) != skip {
                        active.push((p, c));
                    }
                }
                Ok(active)
            }
            (SpaceKind::CellLike, Genotype::Cell { edge_op }) => {
                if edge_op.len() != n {
                    return invalid(format!("expected {n} edges, got {}", edge_op.len()));
                }
                edge_op
                    .iter()
                    .enumerate()
                    .map(|(p, &c)| {
                        if (c as usize) < self.choices.len() {
                            Ok((p, c as usize))
                        } else {
                            Err(Error::InvalidGenotype(format!("edge {p}: operator {c} out of range")))
                        }
                    })
                    .collect()
            }
            (kind, g) => invalid(format!("{:?} genotype used with a {kind:?} space", g.kind())),
        }
    }

    fn mbv2_block_active(&self, position: usize, depth: &[u32]) -> bool {
        let staged = self.stage_count * self.max_blocks_per_stage;
        if position >= staged {
            return true;
        }
        let stage = position / self.max_blocks_per_stage;
        let slot = position % self.max_blocks_per_stage;
        (slot as u32) < depth[stage]
    }

    /// Resets inactive blocks to the first candidate so equal architectures
    /// compare equal.
    pub fn canonical(&self, g: &Genotype) -> Result<Genotype> {
        self.validate(g)?;
        Ok(match g {
            Genotype::MbV2 {
                kernel_size,
                expansion_ratio,
                depth,
            } => {
                let first = &self.choices[0];
                let (k0, e0) = (first.kernel.unwrap_or(0), first.expansion.unwrap_or(0));
                let mut ks = kernel_size.clone();
                let mut es = expansion_ratio.clone();
                for p in 0..self.positions() {
                    if !self.mbv2_block_active(p, depth) {
                        ks[p] = k0;
                        es[p] = e0;
                    }
                }
                Genotype::MbV2 {
                    kernel_size: ks,
                    expansion_ratio: es,
                    depth: depth.clone(),
                }
            }
            other => other.clone(),
        })
    }

    pub fn encode(&self, g: &Genotype) -> Result<ArchEncoding> {
        let mut features = vec![0.0; self.encoding_len()];
        for (p, c) in self.active_choices(g)? {
            if let Some(i) = self.feature_index(p, c) {
                features[i] = 1.0;
            }
        }
        *features.last_mut().expect("non-empty") = 1.0;
        Ok(ArchEncoding { features })
    }

    pub fn decode(&self, enc: &ArchEncoding) -> Result<Genotype> {
        let malformed = |m: String| Err(Error::MalformedEncoding(m));
        if enc.len() != self.encoding_len() {
            return malformed(format!("length {} != {}", enc.len(), self.encoding_len()));
        }
        if enc.bias() != 1.0 {
            return malformed(format!("bias feature is {}", enc.bias()));
        }
        let width = self.group_width();
        let mut picks: Vec<Option<usize>> = Vec::with_capacity(self.positions());
        for (p, group) in enc.as_slice()[..self.feature_len()].chunks(width).enumerate() {
            if group.iter().any(|&v| v != 0.0 && v != 1.0) {
                return malformed(format!("group {p} is not binary"));
            }
            let set: Vec<usize> = group.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            match set.len() {
                0 => picks.push(None),
                1 => picks.push(Some(set[0])),
                n => return malformed(format!("group {p} has {n} set bits")),
            }
        }
        match self.kind {
            SpaceKind::MbV2Like => {
                let mut depth = Vec::with_capacity(self.stage_count);
                for s in 0..self.stage_count {
                    let slots = &picks[s * self.max_blocks_per_stage..(s + 1) * self.max_blocks_per_stage];
                    let d = slots.iter().take_while(|c| c.is_some()).count();
                    if slots[d..].iter().any(Option::is_some) {
                        return malformed(format!("stage {s} has a gap in its active blocks"));
                    }
                    if !self.depth_choices.contains(&(d as u32)) {
                        return malformed(format!("stage {s} depth {d} not in {:?}", self.depth_choices));
                    }
                    depth.push(d as u32);
                }
                let staged = self.stage_count * self.max_blocks_per_stage;
                if let Some(p) = (staged..self.positions()).find(|&p| picks[p].is_none()) {
                    return malformed(format!("fixed block {p} is inactive"));
                }
                let resolve = |c: Option<usize>| &self.choices[c.unwrap_or(0)];
                Ok(Genotype::MbV2 {
                    kernel_size: picks.iter().map(|&c| resolve(c).kernel.unwrap_or(0)).collect(),
                    expansion_ratio: picks.iter().map(|&c| resolve(c).expansion.unwrap_or(0)).collect(),
                    depth,
                })
            }
            SpaceKind::FbNetLike => {
                let skip = self.skip_index();
                let block_choice = picks
                    .iter()
                    .enumerate()
                    .map(|(p, c)| match (c, skip) {
                        (Some(c), _) => Ok(*c as u32),
                        (None, Some(s)) => Ok(s as u32),
                        (None, None) => Err(Error::MalformedEncoding(format!("block {p} is empty"))),
                    })
                    .collect::<Result<_>>()?;
                Ok(Genotype::FbNet { block_choice })
            }
            SpaceKind::CellLike => {
                let edge_op = picks
                    .iter()
                    .enumerate()
                    .map(|(p, c)| c.map(|c| c as u32).ok_or_else(|| Error::MalformedEncoding(format!("edge {p} is empty"))))
                    .collect::<Result<_>>()?;
                Ok(Genotype::Cell { edge_op })
            }
        }
    }

    /// Draws every gene uniformly from its candidate list.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Genotype {
        let n = self.positions();
        match self.kind {
            SpaceKind::MbV2Like => {
                let (ks, es) = (self.kernels(), self.expansions());
                let kernel_size = (0..n).map(|_| *ks.choose(rng).expect("non-empty")).collect();
                let expansion_ratio = (0..n).map(|_| *es.choose(rng).expect("non-empty")).collect();
                let depth = (0..self.stage_count)
                    .map(|_| *self.depth_choices.choose(rng).expect("non-empty"))
                    .collect();
                Genotype::MbV2 {
                    kernel_size,
                    expansion_ratio,
                    depth,
                }
            }
            SpaceKind::FbNetLike => Genotype::FbNet {
                block_choice: (0..n).map(|_| rng.gen_range(0..self.choices.len() as u32)).collect(),
            },
            SpaceKind::CellLike => Genotype::Cell {
                edge_op: (0..n).map(|_| rng.gen_range(0..self.choices.len() as u32)).collect(),
            },
        }
    }

    pub fn random_sample(&self, seed: u64) -> Genotype {
        self.sample_with(&mut rng_for(seed, &[]))
    }

    /// Number of distinct (canonical) architectures, saturating at `u128::MAX`.
    pub fn space_size(&self) -> u128 {
        let n = self.choices.len() as u128;
        let pow = |e: usize| (0..e).try_fold(1u128, |acc, _| acc.checked_mul(n));
        let size = match self.kind {
            SpaceKind::MbV2Like => {
                let per_stage = self
                    .depth_choices
                    .iter()
                    .try_fold(0u128, |acc, &d| pow(d as usize).and_then(|v| acc.checked_add(v)));
                per_stage.and_then(|s| {
                    (0..self.stage_count)
                        .try_fold(1u128, |acc, _| acc.checked_mul(s))
                        .and_then(|v| pow(self.fixed_block_count).and_then(|f| v.checked_mul(f)))
                })
            }
            _ => pow(self.positions()),
        };
        size.unwrap_or(u128::MAX)
    }

    /// Every canonical genotype exactly once, in a fixed order.
    pub fn enumerate(&self) -> Result<Vec<Genotype>> {
        let size = self.space_size();
        if size > u128::from(self.enumeration_cap) {
            return Err(Error::SpaceTooLarge {
                size,
                cap: self.enumeration_cap,
            });
        }
        let n = self.choices.len();
        let mut out = Vec::with_capacity(size as usize);
        match self.kind {
            SpaceKind::MbV2Like => {
                let depth_radix = vec![self.depth_choices.len(); self.stage_count];
                odometer(&depth_radix, |depth_idx| {
                    let depth: Vec<u32> = depth_idx.iter().map(|&i| self.depth_choices[i]).collect();
                    let active: Vec<usize> = (0..self.positions())
                        .filter(|&p| self.mbv2_block_active(p, &depth))
                        .collect();
                    let first = &self.choices[0];
                    odometer(&vec![n; active.len()], |picks| {
                        let mut ks = vec![first.kernel.unwrap_or(0); self.positions()];
                        let mut es = vec![first.expansion.unwrap_or(0); self.positions()];
                        for (&p, &c) in active.iter().zip(picks) {
                            ks[p] = self.choices[c].kernel.unwrap_or(0);
                            es[p] = self.choices[c].expansion.unwrap_or(0);
                        }
                        out.push(Genotype::MbV2 {
                            kernel_size: ks,
                            expansion_ratio: es,
                            depth: depth.clone(),
                        });
                    });
                });
            }
            SpaceKind::FbNetLike => odometer(&vec![n; self.positions()], |picks| {
                out.push(Genotype::FbNet {
                    block_choice: picks.iter().map(|&c| c as u32).collect(),
                })
            }),
            SpaceKind::CellLike => odometer(&vec![n; self.positions()], |picks| {
                out.push(Genotype::Cell {
                    edge_op: picks.iter().map(|&c| c as u32).collect(),
                })
            }),
        }
        Ok(out)
    }

    pub fn arch_stats(&self, g: &Genotype) -> Result<ArchStats> {
        let active = self.active_choices(g)?;
        if active.is_empty() {
            return Err(Error::InvalidGenotype("no active blocks".into()));
        }
        let (flops, bytes) = active.iter().fold((0.0, 0.0), |(f, b), &(p, c)| {
            let cost = self.cost(p, c);
            (f + cost.flops, b + cost.bytes)
        });
        Ok(ArchStats {
            flops,
            bytes,
            operational_intensity: flops / bytes,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SpaceDocument = serde_json::from_str(s)?;
        if doc.version != DOCUMENT_VERSION {
            return Err(Error::InvalidSpace(format!("unsupported document version {}", doc.version)));
        }
        let mut spec = SearchSpaceSpec {
            id: doc.id,
            kind: doc.kind,
            stage_count: doc.stages,
            max_blocks_per_stage: doc.max_blocks_per_stage,
            fixed_block_count: doc.fixed_blocks,
            depth_choices: doc.depth_choices,
            choices: doc.choices,
            cell_edge_count: doc.cell_edge_count,
            cost_table: Vec::new(),
            enumeration_cap: doc.enumeration_cap,
        };
        let (np, nc) = (spec.positions(), spec.choices.len());
        let mut table: Vec<Vec<Option<OpCost>>> = vec![vec![None; nc]; np];
        for (pos, choice, flops, bytes) in doc.cost_table {
            let slot = table
                .get_mut(pos)
                .and_then(|row| row.get_mut(choice))
                .ok_or_else(|| Error::InvalidSpace(format!("cost entry ({pos}, {choice}) out of range")))?;
            if slot.replace(OpCost { flops, bytes }).is_some() {
                return Err(Error::InvalidSpace(format!("duplicate cost entry ({pos}, {choice})")));
            }
        }
        spec.cost_table = table
            .into_iter()
            .enumerate()
            .map(|(p, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(c, v)| v.ok_or_else(|| Error::InvalidSpace(format!("missing cost entry ({p}, {c})"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::new(spec)
    }

    pub fn to_json(&self) -> String {
        let doc = SpaceDocument {
            version: DOCUMENT_VERSION,
            id: self.id.clone(),
            kind: self.kind,
            stages: self.stage_count,
            max_blocks_per_stage: self.max_blocks_per_stage,
            fixed_blocks: self.fixed_block_count,
            depth_choices: self.depth_choices.clone(),
            cell_edge_count: self.cell_edge_count,
            choices: self.choices.clone(),
            enumeration_cap: self.enumeration_cap,
            cost_table: self
                .cost_table
                .iter()
                .enumerate()
                .flat_map(|(p, row)| row.iter().enumerate().map(move |(c, v)| (p, c, v.flops, v.bytes)))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("space serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Built-in name or path to a space document.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }
}

/// Calls `f` with every index vector of the mixed-radix counter, last digit fastest.
fn odometer(radices: &[usize], mut f: impl FnMut(&[usize])) {
    if radices.contains(&0) {
        return;
    }
    let mut digits = vec![0usize; radices.len()];
    loop {
        f(&digits);
        let mut i = digits.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < radices[i] {
                break;
            }
            digits[i] = 0;
        }
    }
}
