//! GPU descriptors: memory hierarchy, block limits and tensor-core tile shapes.
//!
//! Built-in presets live in `presets/*.json` next to this crate and are compiled
//! in. [`GpuSpec::load`] also accepts a path to a JSON file, or a name resolved
//! against the directory in [`PRESET_DIR_ENV`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Directory searched for `<name>.json` before the built-in presets.
pub const PRESET_DIR_ENV: &str = "RNNTILE_GPU_DIR";

pub const PRESET_NAMES: [&str; 4] = ["H100", "A100", "A40", "RTX3090"];

const BUILTIN: [(&str, &str); 4] = [
    ("H100", include_str!("../presets/H100.json")),
    ("A100", include_str!("../presets/A100.json")),
    ("A40", include_str!("../presets/A40.json")),
    ("RTX3090", include_str!("../presets/RTX3090.json")),
];

#[derive(Debug, Error)]
pub enum HardwareError {
    #[error("unknown GPU preset `{0}` (known: H100, A100, A40, RTX3090)")]
    UnknownPreset(String),
    #[error("unknown dtype `{0}` (known: bf16, f16, f32, f64)")]
    UnknownDtype(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid GPU description: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Matrix-multiply fragment `m x k` times `k x n` executed by one warp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[i64; 3]", into = "[i64; 3]")]
pub struct MmaShape {
    pub m: i64,
    pub n: i64,
    pub k: i64,
}

impl From<[i64; 3]> for MmaShape {
    fn from([m, n, k]: [i64; 3]) -> Self {
        MmaShape { m, n, k }
    }
}

impl From<MmaShape> for [i64; 3] {
    fn from(s: MmaShape) -> Self {
        [s.m, s.n, s.k]
    }
}

/// Model constants that are not published hardware facts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub max_registers_per_thread: i64,
    /// Registers per thread taken by addressing, loop state and pointwise temporaries.
    pub overhead_registers_per_thread: i64,
    /// Elements appended to each SRAM row against bank conflicts.
    pub sram_row_padding: i64,
    /// Step of the register-budget search.
    pub budget_granularity_bytes: i64,
    pub blocks_per_sm: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub name: String,
    pub sm_count: i64,
    pub sram_per_sm_bytes: i64,
    pub sram_usable_per_block_bytes: i64,
    pub register_file_per_sm_bytes: i64,
    pub max_threads_per_block: i64,
    pub warp_size: i64,
    pub hbm_bytes: i64,
    pub mma_shapes: Vec<MmaShape>,
    pub min_accumulate_tile: i64,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl GpuSpec {
    pub fn preset(name: &str) -> Result<GpuSpec, HardwareError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| HardwareError::UnknownPreset(name.to_string()))?;
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<GpuSpec, HardwareError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<GpuSpec, HardwareError> {
        let text = std::fs::read_to_string(path).map_err(|source| HardwareError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A file path, a preset in [`PRESET_DIR_ENV`], or a built-in preset, in that order.
    pub fn load(name_or_path: &str) -> Result<GpuSpec, HardwareError> {
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "json") || path.is_file() {
            return Self::from_file(path);
        }
        if let Ok(dir) = std::env::var(PRESET_DIR_ENV) {
            let candidate = Path::new(&dir).join(format!("{name_or_path}.json"));
            if candidate.is_file() {
                return Self::from_file(&candidate);
            }
        }
        Self::preset(name_or_path)
    }

    /// Every broken invariant, by field.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: String| {
            if !ok {
                out.push(Violation { field, message });
            }
        };
        check(!self.name.is_empty(), "name", "must not be empty".into());
        check(
            self.sm_count >= 1,
            "sm_count",
            format!("must be positive, got {}", self.sm_count),
        );
        check(
            self.sram_per_sm_bytes >= 1,
            "sram_per_sm_bytes",
            "must be positive".into(),
        );
        check(
            self.sram_usable_per_block_bytes >= 1,
            "sram_usable_per_block_bytes",
            "must be positive".into(),
        );
        check(
            self.sram_usable_per_block_bytes <= self.sram_per_sm_bytes,
            "sram_usable_per_block_bytes",
            format!(
                "{} exceeds sram_per_sm_bytes {}",
                self.sram_usable_per_block_bytes, self.sram_per_sm_bytes
            ),
        );
        check(
            self.register_file_per_sm_bytes >= 1,
            "register_file_per_sm_bytes",
            "must be positive".into(),
        );
        check(
            self.warp_size >= 1,
            "warp_size",
            format!("must be at least 1, got {}", self.warp_size),
        );
        check(
            self.max_threads_per_block >= 1
                && self.warp_size >= 1
                && self.max_threads_per_block % self.warp_size == 0,
            "max_threads_per_block",
            format!(
                "{} is not a positive multiple of warp_size {}",
                self.max_threads_per_block, self.warp_size
            ),
        );
        check(self.hbm_bytes >= 1, "hbm_bytes", "must be positive".into());
        check(
            !self.mma_shapes.is_empty(),
            "mma_shapes",
            "at least one shape required".into(),
        );
        for s in &self.mma_shapes {
            check(
                s.m >= 1 && s.n >= 1 && s.k >= 1,
                "mma_shapes",
                format!("non-positive shape {:?}", <[i64; 3]>::from(*s)),
            );
        }
        check(
            self.min_accumulate_tile >= 1,
            "min_accumulate_tile",
            "must be positive".into(),
        );
        let c = &self.calibration;
        check(
            c.max_registers_per_thread >= 1,
            "calibration.max_registers_per_thread",
            "must be positive".into(),
        );
        check(
            c.overhead_registers_per_thread >= 0,
            "calibration.overhead_registers_per_thread",
            "must not be negative".into(),
        );
        check(
            c.overhead_registers_per_thread < c.max_registers_per_thread,
            "calibration.overhead_registers_per_thread",
            "must leave registers for data".into(),
        );
        check(
            c.sram_row_padding >= 0,
            "calibration.sram_row_padding",
            "must not be negative".into(),
        );
        check(
            c.budget_granularity_bytes >= 1,
            "calibration.budget_granularity_bytes",
            "must be positive".into(),
        );
        check(
            c.blocks_per_sm >= 1,
            "calibration.blocks_per_sm",
            "must be positive".into(),
        );
        out
    }

    /// Thread-block limit used by the planner: a fourth of the hardware maximum.
    pub fn default_block_threads(&self) -> i64 {
        self.max_threads_per_block / 4
    }

    /// Blocks that can be co-resident in one cooperative grid.
    pub fn max_grid_blocks(&self) -> i64 {
        self.sm_count * self.calibration.blocks_per_sm
    }

    pub fn register_file_per_block_bytes(&self) -> i64 {
        self.register_file_per_sm_bytes / self.calibration.blocks_per_sm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Bf16,
    F16,
    F32,
    F64,
}

impl Dtype {
    pub fn bytes(self) -> i64 {
        match self {
            Dtype::Bf16 | Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::Bf16 => "bf16",
            Dtype::F16 => "f16",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn spec(self) -> DtypeSpec {
        DtypeSpec {
            name: self.name().to_string(),
            bytes_per_element: self.bytes(),
        }
    }
}

impl FromStr for Dtype {
    type Err = HardwareError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bf16" | "bfloat16" => Ok(Dtype::Bf16),
            "f16" | "fp16" | "float16" => Ok(Dtype::F16),
            "f32" | "fp32" | "float32" => Ok(Dtype::F32),
            "f64" | "fp64" | "float64" => Ok(Dtype::F64),
            _ => Err(HardwareError::UnknownDtype(s.to_string())),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtypeSpec {
    pub name: String,
    pub bytes_per_element: i64,
}
