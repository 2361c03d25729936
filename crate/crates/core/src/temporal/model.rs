//! Parameter layout of the attentional Grid LSTM.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] records where each weight block
//! sits. Gradients use the same layout, which keeps the optimizer, checkpointing and
//! finite-difference checks independent of the network structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TemporalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of input features per timestep.
    pub features: usize,
    /// Hidden/memory width of every grid cell.
    pub hidden: usize,
    /// Stacked grid layers along the depth dimension.
    pub layers: usize,
    /// Decoder reuses the encoder grid cells instead of owning its own.
    pub share_decoder_cells: bool,
}

impl ModelConfig {
    pub fn new(features: usize, hidden: usize) -> Self {
        Self {
            features,
            hidden,
            layers: 2,
            share_decoder_cells: false,
        }
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        if self.features == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(TemporalError::InvalidConfig(format!(
                "features, hidden and layers must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A contiguous block of parameters, `rows × cols` row-major (`cols == 1` for vectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seg {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Seg {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len()
    }

    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.range()]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.range()]
    }
}

/// Gate weights of one 2-D grid cell: one `4d × 2d` block plus bias per stream.
/// Gate rows are ordered input, forget, output, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellLayout {
    pub time_w: Seg,
    pub time_b: Seg,
    pub depth_w: Seg,
    pub depth_b: Seg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub attn_w: Seg,
    pub attn_b: Seg,
    pub enc_in_w: Seg,
    pub enc_in_b: Seg,
    pub enc_cells: Vec<CellLayout>,
    pub query_w: Seg,
    pub key_w: Seg,
    pub dec_in_w: Seg,
    pub dec_in_b: Seg,
    pub dec_cells: Vec<CellLayout>,
    pub head_w: Seg,
    pub head_b: Seg,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, rows: usize, cols: usize) -> Seg {
        let s = Seg {
            off: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        s
    }

    fn cell(&mut self, d: usize) -> CellLayout {
        CellLayout {
            time_w: self.take(4 * d, 2 * d),
            time_b: self.take(4 * d, 1),
            depth_w: self.take(4 * d, 2 * d),
            depth_b: self.take(4 * d, 1),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (n, d) = (cfg.features, cfg.hidden);
        let mut a = Alloc(0);
        let attn_w = a.take(n, n + d);
        let attn_b = a.take(n, 1);
        let enc_in_w = a.take(d, n);
        let enc_in_b = a.take(d, 1);
        let enc_cells: Vec<CellLayout> = (0..cfg.layers).map(|_| a.cell(d)).collect();
        let query_w = a.take(d, d);
        let key_w = a.take(d, d);
        let dec_in_w = a.take(d, d);
        let dec_in_b = a.take(d, 1);
        let dec_cells = if cfg.share_decoder_cells {
            enc_cells.clone()
        } else {
            (0..cfg.layers).map(|_| a.cell(d)).collect()
        };
        let head_w = a.take(1, d);
        let head_b = a.take(1, 1);
        Layout {
            attn_w,
            attn_b,
            enc_in_w,
            enc_in_b,
            enc_cells,
            query_w,
            key_w,
            dec_in_w,
            dec_in_b,
            dec_cells,
            head_w,
            head_b,
            total: a.0,
        }
    }

    /// Every distinct weight block with its fan-in (input width) and a readable name.
    pub fn blocks(&self) -> Vec<(String, Seg, usize)> {
        let mut out = vec![
            ("attention.w".to_string(), self.attn_w, self.attn_w.cols),
            ("attention.b".into(), self.attn_b, self.attn_w.cols),
            ("encoder.input.w".into(), self.enc_in_w, self.enc_in_w.cols),
            ("encoder.input.b".into(), self.enc_in_b, self.enc_in_w.cols),
        ];
        let cell_blocks =
            |out: &mut Vec<(String, Seg, usize)>, prefix: &str, cells: &[CellLayout]| {
                for (l, c) in cells.iter().enumerate() {
                    let fan = c.time_w.cols;
                    out.push((format!("{prefix}.{l}.time.w"), c.time_w, fan));
                    out.push((format!("{prefix}.{l}.time.b"), c.time_b, fan));
                    out.push((format!("{prefix}.{l}.depth.w"), c.depth_w, fan));
                    out.push((format!("{prefix}.{l}.depth.b"), c.depth_b, fan));
                }
            };
        cell_blocks(&mut out, "encoder.cell", &self.enc_cells);
        out.push(("cross.query.w".into(), self.query_w, self.query_w.cols));
        out.push(("cross.key.w".into(), self.key_w, self.key_w.cols));
        out.push(("decoder.input.w".into(), self.dec_in_w, self.dec_in_w.cols));
        out.push(("decoder.input.b".into(), self.dec_in_b, self.dec_in_w.cols));
        if self.dec_cells != self.enc_cells {
            cell_blocks(&mut out, "decoder.cell", &self.dec_cells);
        }
        out.push(("head.w".into(), self.head_w, self.head_w.cols));
        out.push(("head.b".into(), self.head_b, self.head_w.cols));
        out
    }
}

/// Attentional Grid LSTM parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLstmModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl GridLstmModel {
    /// Uniform initialisation in `±1/√fan_in`, seeded.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, TemporalError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, seg, fan_in) in layout.blocks() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in seg.of_mut(&mut params) {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, TemporalError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self, TemporalError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(TemporalError::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(TemporalError::NonFinite);
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn features(&self) -> usize {
        self.config.features
    }
}
