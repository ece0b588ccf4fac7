//! Finite signal sets and their per-user vector alphabets.
//!
//! Point ordering is deterministic:
//!
//! * PSK: increasing phase starting from angle 0, except QPSK which sits on
//!   the odd multiples of 45°.
//! * QAM: square grid in lexicographic order, in-phase level major and
//!   quadrature level minor, both ascending.
//! * PAM: real levels in ascending order.
//!
//! All constellations are scaled to unit average energy.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Psk,
    Qam,
    Pam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(kind: ConstellationKind, order: usize) -> Result<Self> {
        make_constellation(kind, order)
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Complex64 {
        self.points[i]
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order() as f64
    }

    pub fn mean(&self) -> Complex64 {
        self.points.iter().sum::<Complex64>() / self.order() as f64
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.order()) {
            (ConstellationKind::Psk, 2) => write!(f, "bpsk"),
            (ConstellationKind::Psk, 4) => write!(f, "qpsk"),
            (ConstellationKind::Psk, q) => write!(f, "{q}psk"),
            (ConstellationKind::Qam, q) => write!(f, "{q}qam"),
            (ConstellationKind::Pam, q) => write!(f, "{q}pam"),
        }
    }
}

impl FromStr for Constellation {
    type Err = Error;

    /// Parses names such as `bpsk`, `qpsk`, `8psk`, `16qam`, `4pam`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "bpsk" => return make_constellation(ConstellationKind::Psk, 2),
            "qpsk" => return make_constellation(ConstellationKind::Psk, 4),
            _ => {}
        }
        let (digits, kind) = if let Some(d) = s.strip_suffix("psk") {
            (d, ConstellationKind::Psk)
        } else if let Some(d) = s.strip_suffix("qam") {
            (d, ConstellationKind::Qam)
        } else if let Some(d) = s.strip_suffix("pam") {
            (d, ConstellationKind::Pam)
        } else {
            return Err(Error::invalid(format!("unknown modulation '{s}'")));
        };
        let order: usize = digits
            .parse()
            .map_err(|_| Error::invalid(format!("unknown modulation '{s}'")))?;
        make_constellation(kind, order)
    }
}

impl Serialize for Constellation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Constellation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Builds a unit-energy, zero-mean constellation.
pub fn make_constellation(kind: ConstellationKind, order: usize) -> Result<Constellation> {
    let supported = match kind {
        ConstellationKind::Psk => matches!(order, 2 | 4 | 8 | 16 | 32 | 64),
        ConstellationKind::Qam => matches!(order, 4 | 16 | 64 | 256),
        ConstellationKind::Pam => matches!(order, 2 | 4 | 8 | 16),
    };
    if !supported {
        return Err(Error::invalid(format!(
            "unsupported constellation {kind:?} of order {order}"
        )));
    }
    let points = match kind {
        ConstellationKind::Psk => {
            let offset = if order == 4 { PI / 4.0 } else { 0.0 };
            (0..order)
                .map(|k| Complex64::from_polar(1.0, offset + 2.0 * PI * k as f64 / order as f64))
                .collect()
        }
        ConstellationKind::Qam => {
            let side = (order as f64).sqrt().round() as usize;
            let levels = pam_levels(side);
            let scale = (2.0 * (side * side - 1) as f64 / 3.0).sqrt();
            let mut pts = Vec::with_capacity(order);
            for &i in &levels {
                for &q in &levels {
                    pts.push(Complex64::new(i, q) / scale);
                }
            }
            pts
        }
        ConstellationKind::Pam => {
            let scale = (((order * order - 1) as f64) / 3.0).sqrt();
            pam_levels(order)
                .into_iter()
                .map(|l| Complex64::new(l / scale, 0.0))
                .collect()
        }
    };
    Ok(Constellation { kind, points })
}

/// Odd integer levels -(L-1), ..., L-1.
fn pam_levels(l: usize) -> Vec<f64> {
    (0..l).map(|i| 2.0 * i as f64 - (l as f64 - 1.0)).collect()
}

/// The `n_t`-fold product of a constellation, enumerated by index and never
/// materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorAlphabet {
    base: Constellation,
    n_t: usize,
    size: usize,
}

impl VectorAlphabet {
    pub fn new(base: Constellation, n_t: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::invalid("vector alphabet needs at least one antenna"));
        }
        let size = (base.order() as u64)
            .checked_pow(n_t as u32)
            .filter(|&m| m <= usize::MAX as u64 && m <= 1 << 40)
            .ok_or_else(|| Error::ResourceLimit {
                what: "vector alphabet".into(),
                size: (base.order() as u128).saturating_pow(n_t as u32),
                cap: 1 << 40,
            })? as usize;
        Ok(Self { base, n_t, size })
    }

    pub fn base(&self) -> &Constellation {
        &self.base
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// M = Q^{n_t}.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> f64 {
        (self.size as f64).log2()
    }

    /// Symbol vector for `index`; the most significant base-Q digit drives antenna 1.
    pub fn vector_symbol(&self, index: usize) -> Result<CVec> {
        if index >= self.size {
            return Err(Error::invalid(format!(
                "symbol index {index} out of range for alphabet of size {}",
                self.size
            )));
        }
        Ok(self.symbol_unchecked(index))
    }

    pub(crate) fn symbol_unchecked(&self, mut index: usize) -> CVec {
        let q = self.base.order();
        let mut v = CVec::zeros(self.n_t);
        for ant in (0..self.n_t).rev() {
            v[ant] = self.base.point(index % q);
            index /= q;
        }
        v
    }

    /// All symbol vectors in index order; callers bound the size themselves.
    pub fn symbols(&self) -> Vec<CVec> {
        (0..self.size).map(|i| self.symbol_unchecked(i)).collect()
    }
}

pub fn vector_symbol(alphabet: &VectorAlphabet, index: usize) -> Result<CVec> {
    alphabet.vector_symbol(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionMode {
    /// Sums over each user's own transmit vectors.
    PerUser,
    /// Sums over all users' transmit vectors jointly.
    Joint,
}

/// Number of additions needed to evaluate the mutual information and MSE
/// matrices: Σ_k Q_k^{2 n_t} per user, or (Π_k Q_k)^{2 n_t} jointly.
pub fn count_additions(mode: AdditionMode, orders: &[u32], n_t: u32) -> Result<BigUint> {
    if orders.is_empty() || orders.iter().any(|&q| q < 2) || n_t == 0 {
        return Err(Error::invalid(
            "count_additions needs at least one order, every order >= 2 and n_t >= 1",
        ));
    }
    Ok(match mode {
        AdditionMode::PerUser => orders
            .iter()
            .map(|&q| BigUint::from(q).pow(2 * n_t))
            .sum(),
        AdditionMode::Joint => orders
            .iter()
            .map(|&q| BigUint::from(q))
            .product::<BigUint>()
            .pow(2 * n_t),
    })
}
