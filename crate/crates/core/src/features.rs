//! Model inputs: address segmentation, context features and the tokenized
//! encodings used as ablation baselines.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::trace::{low_mask, AddressConfig, MemoryAccess};

/// Segment width `s` in bits. Segment count is `ceil((p + c) / s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub bits: u32,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { bits: 6 }
    }
}

impl SegmentationConfig {
    pub fn new(bits: u32) -> Self {
        Self { bits }
    }

    pub fn validate(&self, addr: &AddressConfig) -> Result<()> {
        let width = addr.block_bits();
        if self.bits == 0 || self.bits > width || self.bits > 32 {
            return Err(Error::Config(format!(
                "segment width {} outside 1..={}",
                self.bits,
                width.min(32)
            )));
        }
        Ok(())
    }

    pub fn segment_count(&self, addr: &AddressConfig) -> usize {
        addr.block_bits().div_ceil(self.bits) as usize
    }

    /// Width of segment 0, which holds the leftover high bits.
    fn top_width(&self, addr: &AddressConfig) -> u32 {
        let rem = addr.block_bits() % self.bits;
        if rem == 0 {
            self.bits
        } else {
            rem
        }
    }
}

/// A block address cut into fixed-width segments, most significant first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedAddress {
    pub segments: Vec<u64>,
    /// `segments[i] / 2^s`, each in `[0, 1)`.
    pub normalized: Vec<f64>,
}

pub fn segment_address(
    block: u64,
    cfg: &SegmentationConfig,
    addr: &AddressConfig,
) -> SegmentedAddress {
    let count = cfg.segment_count(addr);
    let block = block & addr.block_mask();
    let mask = low_mask(cfg.bits);
    let scale = 1.0 / (1u64 << cfg.bits) as f64;
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let shift = ((count - 1 - i) as u32) * cfg.bits;
        segments.push((block >> shift) & mask);
    }
    let normalized = segments.iter().map(|&v| v as f64 * scale).collect();
    SegmentedAddress {
        segments,
        normalized,
    }
}

/// Inverse of [`segment_address`].
pub fn desegment(
    seg: &SegmentedAddress,
    cfg: &SegmentationConfig,
    addr: &AddressConfig,
) -> Result<u64> {
    let count = cfg.segment_count(addr);
    if seg.segments.len() != count {
        return Err(Error::Shape(format!(
            "expected {count} segments, got {}",
            seg.segments.len()
        )));
    }
    let mut block = 0u64;
    for (i, &v) in seg.segments.iter().enumerate() {
        let width = if i == 0 { cfg.top_width(addr) } else { cfg.bits };
        if v > low_mask(width) {
            return Err(Error::Range {
                what: "segment value",
                value: v as i64,
            });
        }
        block = if cfg.bits >= 64 { v } else { (block << cfg.bits) | v };
    }
    Ok(block)
}

/// Folds `pc` into `hash_bits`-bit chunks (low to high), sums them modulo
/// `2^hash_bits` and normalizes into `[0, 1)`.
pub fn pc_context(pc: u64, hash_bits: u32) -> f64 {
    debug_assert!((1..=32).contains(&hash_bits));
    let mask = low_mask(hash_bits);
    let mut rest = pc;
    let mut acc = 0u64;
    let chunks = 64u32.div_ceil(hash_bits);
    for _ in 0..chunks {
        acc = (acc + (rest & mask)) & mask;
        rest = rest.checked_shr(hash_bits).unwrap_or(0);
    }
    acc as f64 / (1u64 << hash_bits) as f64
}

/// Inverse page distance `1 / (|page_n - page_1| + 1)`, in `(0, 1]`.
pub fn page_distance_context(page_n: u64, page_1: u64) -> f64 {
    let distance = page_n.abs_diff(page_1) as f64;
    1.0 / (distance + 1.0)
}

/// One model input sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    /// N×S encoded history, row 0 is the current (most recent) access.
    pub history: Matrix,
    /// N×2 rows of `(c_pc, c_pd)`.
    pub context: Matrix,
}

impl ModelInput {
    pub fn history_len(&self) -> usize {
        self.history.rows()
    }

    pub fn row_width(&self) -> usize {
        self.history.cols()
    }
}

/// What to do when a growing dictionary is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    #[default]
    Error,
    MapToOov,
}

/// Value-to-token dictionary for the tokenized input encodings.
///
/// Token ids are assigned in first-seen order. The out-of-vocabulary token
/// is `capacity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDictionary {
    to_token: BTreeMap<i64, u32>,
    to_value: Vec<i64>,
    capacity: usize,
    frozen: bool,
    overflow: OverflowPolicy,
}

impl TokenDictionary {
    pub fn new(capacity: usize, overflow: OverflowPolicy) -> Self {
        Self {
            to_token: BTreeMap::new(),
            to_value: Vec::new(),
            capacity,
            frozen: false,
            overflow,
        }
    }

    pub fn len(&self) -> usize {
        self.to_value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_value.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn oov_token(&self) -> u32 {
        self.capacity as u32
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops growth; unknown values map to the OOV token from now on.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn value(&self, token: u32) -> Option<i64> {
        self.to_value.get(token as usize).copied()
    }

    pub fn lookup(&self, value: i64) -> Option<u32> {
        self.to_token.get(&value).copied()
    }

    pub fn token(&mut self, value: i64) -> Result<u32> {
        if let Some(t) = self.to_token.get(&value) {
            return Ok(*t);
        }
        if self.frozen {
            return Ok(self.oov_token());
        }
        if self.to_value.len() >= self.capacity {
            return match self.overflow {
                OverflowPolicy::Error => Err(Error::Capacity(self.capacity)),
                OverflowPolicy::MapToOov => Ok(self.oov_token()),
            };
        }
        let t = self.to_value.len() as u32;
        self.to_token.insert(value, t);
        self.to_value.push(value);
        Ok(t)
    }
}

pub fn tokenize(values: &[i64], dict: &mut TokenDictionary) -> Result<Vec<u32>> {
    values.iter().map(|&v| dict.token(v)).collect()
}

/// How history addresses are turned into input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMode {
    /// Address segmentation with `bits`-wide segments.
    Segments { bits: u32 },
    /// One-hot token of the block delta to the previous access.
    Delta,
    /// One-hot page token plus the normalized in-page block offset.
    PageOffset,
}

impl InputMode {
    pub fn label(&self) -> alloc::string::String {
        match self {
            InputMode::Segments { bits } => format!("as{bits}"),
            InputMode::Delta => "delta".into(),
            InputMode::PageOffset => "page_offset".into(),
        }
    }

    /// Parses `as<bits>`, `delta` or `page_offset`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(InputMode::Delta),
            "page_offset" => Ok(InputMode::PageOffset),
            _ => s
                .strip_prefix("as")
                .and_then(|b| b.parse().ok())
                .map(|bits| InputMode::Segments { bits })
                .ok_or_else(|| Error::Config(format!("unknown input mode `{s}`"))),
        }
    }
}

/// Stateful row encoder for one input mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputEncoder {
    Segments(SegmentationConfig),
    Delta(TokenDictionary),
    PageOffset(TokenDictionary),
}

impl InputEncoder {
    pub fn new(mode: InputMode, token_capacity: usize, overflow: OverflowPolicy) -> Self {
        match mode {
            InputMode::Segments { bits } => Self::Segments(SegmentationConfig::new(bits)),
            InputMode::Delta => Self::Delta(TokenDictionary::new(token_capacity, overflow)),
            InputMode::PageOffset => {
                Self::PageOffset(TokenDictionary::new(token_capacity, overflow))
            }
        }
    }

    pub fn mode(&self) -> InputMode {
        match self {
            Self::Segments(c) => InputMode::Segments { bits: c.bits },
            Self::Delta(_) => InputMode::Delta,
            Self::PageOffset(_) => InputMode::PageOffset,
        }
    }

    pub fn row_width(&self, addr: &AddressConfig) -> usize {
        match self {
            Self::Segments(c) => c.segment_count(addr),
            Self::Delta(d) => d.capacity() + 1,
            Self::PageOffset(d) => d.capacity() + 2,
        }
    }

    /// Records needed beyond the N history positions.
    pub fn extra_history(&self) -> usize {
        match self {
            Self::Delta(_) => 1,
            _ => 0,
        }
    }

    pub fn dictionary(&self) -> Option<&TokenDictionary> {
        match self {
            Self::Segments(_) => None,
            Self::Delta(d) | Self::PageOffset(d) => Some(d),
        }
    }

    /// Dictionary entries held by this encoder (0 for segmentation).
    pub fn dictionary_size(&self) -> usize {
        self.dictionary().map_or(0, TokenDictionary::len)
    }

    pub fn freeze(&mut self) {
        if let Self::Delta(d) | Self::PageOffset(d) = self {
            d.freeze();
        }
    }

    fn encode_row(
        &mut self,
        window: &[MemoryAccess],
        i: usize,
        addr: &AddressConfig,
        out: &mut [f64],
    ) -> Result<()> {
        let block = addr.block_address(window[i].vaddr);
        match self {
            Self::Segments(cfg) => {
                let seg = segment_address(block, cfg, addr);
                out.copy_from_slice(&seg.normalized);
            }
            Self::Delta(dict) => {
                let prev = addr.block_address(window[i + 1].vaddr);
                let t = dict.token(block.wrapping_sub(prev) as i64)?;
                out[t as usize] = 1.0;
            }
            Self::PageOffset(dict) => {
                let t = dict.token(addr.page_of_block(block) as i64)?;
                out[t as usize] = 1.0;
                let offset = addr.offset_of_block(block) as f64;
                out[out.len() - 1] = offset / addr.blocks_per_page() as f64;
            }
        }
        Ok(())
    }
}

/// Feature parameters shared by every input mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// History length `N`.
    pub history: usize,
    pub hash_bits: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            history: 9,
            hash_bits: 16,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::Config("history length must be at least 1".into()));
        }
        if !(1..=32).contains(&self.hash_bits) {
            return Err(Error::Config(format!(
                "hash_bits {} outside 1..=32",
                self.hash_bits
            )));
        }
        Ok(())
    }
}

/// Builds one input from `window`, most recent access first. The window
/// holds exactly `history + encoder.extra_history()` records.
pub fn build_model_input(
    window: &[MemoryAccess],
    encoder: &mut InputEncoder,
    features: &FeatureConfig,
    addr: &AddressConfig,
) -> Result<ModelInput> {
    let n = features.history;
    let need = n + encoder.extra_history();
    if window.len() != need {
        return Err(Error::Window {
            got: window.len(),
            need,
        });
    }
    let width = encoder.row_width(addr);
    let mut history = Matrix::zeros(n, width);
    let mut context = Matrix::zeros(n, 2);
    let current_page = addr.page_of_block(addr.block_address(window[0].vaddr));
    for i in 0..n {
        encoder.encode_row(window, i, addr, history.row_mut(i))?;
        let page = addr.page_of_block(addr.block_address(window[i].vaddr));
        context[(i, 0)] = pc_context(window[i].pc, features.hash_bits);
        context[(i, 1)] = page_distance_context(page, current_page);
    }
    Ok(ModelInput { history, context })
}
