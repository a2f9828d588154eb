use serde::{Deserialize, Serialize};

use crate::blocks::{LgfiOptions, LocalBranch, SkafPool};
use crate::error::{Error, Result};
use crate::tensor::DType;

/// Structural switches for ablation studies. The default is the full model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_sa: bool,
    pub no_rdfe: bool,
    pub no_skaf: bool,
    pub ffn_instead_of_rdfe: bool,
    /// Keep only the depthwise branch of this kernel size (3, 5 or 7).
    pub rdfe_single_path: Option<usize>,
    pub skaf_pool: SkafPool,
    /// Decoders add the skip feature instead of fusing it with EDFF.
    pub no_edff: bool,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub base_channels: usize,
    pub heads: usize,
    /// Network input height and width (the pre-upsampled image size).
    pub input_size: usize,
    pub scale: usize,
    pub au_reduction: usize,
    pub ablation: Ablation,
    pub dtype: DType,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_channels: 32,
            heads: 4,
            input_size: 128,
            scale: 8,
            au_reduction: 4,
            ablation: Ablation::default(),
            dtype: DType::F32,
        }
    }
}

/// Named ablation variants accepted by [`make_variant`].
pub const VARIANTS: &[&str] = &[
    "full",
    "no_sa",
    "no_rdfe",
    "no_skaf",
    "ffn_instead_of_rdfe",
    "single_path_3",
    "single_path_5",
    "single_path_7",
    "skaf_pool_avg",
    "skaf_pool_max",
    "skaf_pool_both",
    "no_edff",
];

impl ArchConfig {
    /// A small configuration with default flags. Heads are capped so each
    /// keeps at least two channels: with one channel per head the attention
    /// softmax is over a single entry and the query/key projections receive
    /// no gradient.
    pub fn tiny(base_channels: usize, input_size: usize) -> Self {
        ArchConfig {
            base_channels,
            input_size,
            heads: (base_channels / 2).clamp(1, 4),
            au_reduction: 4.min(base_channels),
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        let fail = |msg: String| Err(Error::Config(msg));
        if c == 0 {
            return fail("base_channels must be positive".into());
        }
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return fail(format!("heads {} must divide base_channels {c}", self.heads));
        }
        if self.au_reduction == 0 || !c.is_multiple_of(self.au_reduction) {
            return fail(format!(
                "au_reduction {} must divide base_channels {c}",
                self.au_reduction
            ));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return fail(format!(
                "input_size {} must be a positive multiple of 8",
                self.input_size
            ));
        }
        if ![2, 4, 8].contains(&self.scale) {
            return fail(format!("scale {} must be 2, 4 or 8", self.scale));
        }
        if !self.input_size.is_multiple_of(self.scale) {
            return fail(format!(
                "input_size {} is not divisible by scale {}",
                self.input_size, self.scale
            ));
        }
        let a = &self.ablation;
        if let Some(k) = a.rdfe_single_path {
            if ![3, 5, 7].contains(&k) {
                return fail(format!("rdfe_single_path must be 3, 5 or 7, got {k}"));
            }
        }
        let local_flags =
            usize::from(a.no_rdfe) + usize::from(a.ffn_instead_of_rdfe) + usize::from(a.rdfe_single_path.is_some());
        if local_flags > 1 {
            return fail("no_rdfe, ffn_instead_of_rdfe and rdfe_single_path are mutually exclusive".into());
        }
        if a.no_sa && a.no_rdfe {
            return fail("no_sa and no_rdfe together leave LGFI without branches".into());
        }
        Ok(())
    }

    /// Options for every LGFI block of this architecture.
    pub fn lgfi_options(&self) -> LgfiOptions {
        let a = &self.ablation;
        let local = if a.no_rdfe {
            LocalBranch::Off
        } else if a.ffn_instead_of_rdfe {
            LocalBranch::Ffn
        } else if let Some(k) = a.rdfe_single_path {
            LocalBranch::SinglePath(k)
        } else {
            LocalBranch::Rdfe
        };
        LgfiOptions {
            heads: self.heads,
            reduction: self.au_reduction,
            sa: !a.no_sa,
            local,
            skaf: !a.no_skaf,
            skaf_pool: a.skaf_pool,
        }
    }

    /// Low-resolution edge length: `input_size / scale`.
    pub fn lr_size(&self) -> usize {
        self.input_size / self.scale
    }
}

/// Returns `config` with the named ablation applied on top of its existing
/// flags.
pub fn make_variant(config: &ArchConfig, flag: &str) -> Result<ArchConfig> {
    let mut out = config.clone();
    let a = &mut out.ablation;
    match flag {
        "full" => out.ablation = Ablation::default(),
        "no_sa" => a.no_sa = true,
        "no_rdfe" => a.no_rdfe = true,
        "no_skaf" => a.no_skaf = true,
        "ffn_instead_of_rdfe" => a.ffn_instead_of_rdfe = true,
        "single_path_3" => a.rdfe_single_path = Some(3),
        "single_path_5" => a.rdfe_single_path = Some(5),
        "single_path_7" => a.rdfe_single_path = Some(7),
        "skaf_pool_avg" => a.skaf_pool = SkafPool::Avg,
        "skaf_pool_max" => a.skaf_pool = SkafPool::Max,
        "skaf_pool_both" => a.skaf_pool = SkafPool::Both,
        "no_edff" => a.no_edff = true,
        other => {
            return Err(Error::Config(format!(
                "unknown variant {other:?}; expected one of {}",
                VARIANTS.join(", ")
            )))
        }
    }
    out.validate()?;
    Ok(out)
}
