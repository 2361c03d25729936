use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HpoError;

/// Decoded hyperparameters by gene name.
pub type Params = BTreeMap<String, i64>;

/// One integer hyperparameter in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSpec {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

impl GeneSpec {
    pub fn new(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }

    /// `⌈log₂(hi − lo + 1)⌉`, zero for a fixed gene.
    pub fn bits(&self) -> usize {
        let span = (self.hi - self.lo) as u64 + 1;
        (u64::BITS - (span - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chromosome {
    /// Genes in codec order, each most significant bit first.
    pub bits: Vec<bool>,
    pub decoded: Params,
}

impl Chromosome {
    pub fn bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

/// Plain binary codec: each gene stores `value − lo`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    genes: Vec<GeneSpec>,
}

impl Codec {
    pub fn new(genes: Vec<GeneSpec>) -> Result<Self, HpoError> {
        if genes.is_empty() {
            return Err(HpoError::InvalidConfig(
                "codec needs at least one gene".into(),
            ));
        }
        for (i, g) in genes.iter().enumerate() {
            if g.hi < g.lo {
                return Err(HpoError::InvalidConfig(format!(
                    "gene {} has hi {} below lo {}",
                    g.name, g.hi, g.lo
                )));
            }
            if genes[..i].iter().any(|o| o.name == g.name) {
                return Err(HpoError::InvalidConfig(format!(
                    "duplicate gene {}",
                    g.name
                )));
            }
        }
        Ok(Self { genes })
    }

    pub fn genes(&self) -> &[GeneSpec] {
        &self.genes
    }

    pub fn bit_len(&self) -> usize {
        self.genes.iter().map(GeneSpec::bits).sum()
    }

    pub fn encode(&self, params: &Params) -> Result<Chromosome, HpoError> {
        if let Some(unknown) = params
            .keys()
            .find(|k| !self.genes.iter().any(|g| &g.name == *k))
        {
            return Err(HpoError::UnknownGene(unknown.clone()));
        }
        let mut bits = Vec::with_capacity(self.bit_len());
        for g in &self.genes {
            let v = *params
                .get(&g.name)
                .ok_or_else(|| HpoError::MissingGene(g.name.clone()))?;
            if v < g.lo || v > g.hi {
                return Err(HpoError::OutOfRange {
                    gene: g.name.clone(),
                    value: v,
                });
            }
            let raw = (v - g.lo) as u64;
            let n = g.bits();
            bits.extend((0..n).rev().map(|b| (raw >> b) & 1 == 1));
        }
        let decoded = self.decode_bits(&bits);
        Ok(Chromosome { bits, decoded })
    }

    fn bits_checked_len(&self, len: usize) -> Result<(), HpoError> {
        if len != self.bit_len() {
            return Err(HpoError::LengthMismatch {
                expected: self.bit_len(),
                found: len,
            });
        }
        Ok(())
    }

    fn decode_bits(&self, bits: &[bool]) -> Params {
        let mut out = Params::new();
        let mut pos = 0;
        for g in &self.genes {
            let n = g.bits();
            let raw = bits[pos..pos + n]
                .iter()
                .fold(0u64, |acc, &b| (acc << 1) | b as u64);
            pos += n;
            // repair: values past hi clamp to hi
            let v = (g.lo as i128 + raw as i128).min(g.hi as i128) as i64;
            out.insert(g.name.clone(), v);
        }
        out
    }

    /// Decodes raw bits, clamping out-of-range genes to their upper bound.
    pub fn decode(&self, bits: &[bool]) -> Result<Chromosome, HpoError> {
        self.bits_checked_len(bits.len())?;
        Ok(Chromosome {
            bits: bits.to_vec(),
            decoded: self.decode_bits(bits),
        })
    }

    pub fn random<R: Rng>(&self, rng: &mut R) -> Chromosome {
        let bits: Vec<bool> = (0..self.bit_len()).map(|_| rng.random_bool(0.5)).collect();
        let decoded = self.decode_bits(&bits);
        Chromosome { bits, decoded }
    }
}
