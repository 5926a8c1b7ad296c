//! Surface-level evidence for a (mention, entity) pair and the RBF
//! binning that lifts every scalar feature to a 10-d vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of RBF centers per scalar.
pub const RBF_BINS: usize = 10;
/// Scalars in [`LexicalFeatures`].
pub const LEXICAL_FEATURES: usize = 9;

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn min_edit(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A single token of at least two letters, none lowercase. Periods and
/// other non-letter symbols are allowed ("U.S.A.", "AT&T").
pub fn is_acronym(s: &str) -> bool {
    if s.chars().any(char::is_whitespace) {
        return false;
    }
    let mut letters = 0;
    for c in s.chars() {
        if c.is_alphabetic() {
            if !c.is_uppercase() {
                return false;
            }
            letters += 1;
        }
    }
    letters >= 2
}

fn acronym_letters(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_uppercase)
        .collect()
}

fn initials(tokens: &[String]) -> String {
    tokens
        .iter()
        .filter_map(|t| t.chars().find(|c| c.is_alphabetic()))
        .flat_map(char::to_uppercase)
        .collect()
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// f1..f8 and f10 of the lexical feature list, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexicalFeatures(pub [f64; LEXICAL_FEATURES]);

impl LexicalFeatures {
    pub fn mention_len(&self) -> f64 {
        self.0[0]
    }
    pub fn title_len(&self) -> f64 {
        self.0[1]
    }
    pub fn title_occurrences(&self) -> f64 {
        self.0[2]
    }
    pub fn mention_is_acronym(&self) -> f64 {
        self.0[3]
    }
    pub fn title_is_acronym(&self) -> f64 {
        self.0[4]
    }
    pub fn acronym_match(&self) -> f64 {
        self.0[5]
    }
    pub fn exact_match(&self) -> f64 {
        self.0[6]
    }
    pub fn edit_distance(&self) -> f64 {
        self.0[7]
    }
    pub fn partial_edit_sum(&self) -> f64 {
        self.0[8]
    }
}

/// Lexical evidence between mention tokens and an entity title, given
/// the document's tokens. Edit distances are computed case-folded.
pub fn lexical_features(
    mention: &[String],
    title: &[String],
    document: &[String],
) -> LexicalFeatures {
    let m_joined = mention.join(" ");
    let t_joined = title.join(" ");
    let m_acr = is_acronym(&m_joined);
    let t_acr = is_acronym(&t_joined);

    let folded_doc: Vec<String> = document.iter().map(|t| fold(t)).collect();
    let occurrences: usize = title
        .iter()
        .map(|t| {
            let t = fold(t);
            folded_doc.iter().filter(|d| **d == t).count()
        })
        .sum();

    let acronym_match =
        (m_acr && t_acr && acronym_letters(&m_joined) == acronym_letters(&t_joined))
            || (m_acr && title.len() >= 2 && initials(title) == acronym_letters(&m_joined))
            || (t_acr && mention.len() >= 2 && initials(mention) == acronym_letters(&t_joined));
    let exact = !m_acr && !t_acr && fold(&m_joined) == fold(&t_joined);

    let partial: usize = mention
        .iter()
        .map(|m| {
            let m = fold(m);
            title
                .iter()
                .map(|t| min_edit(&m, &fold(t)))
                .min()
                .unwrap_or(m.chars().count())
        })
        .sum();

    LexicalFeatures([
        mention.len() as f64,
        title.len() as f64,
        occurrences as f64,
        f64::from(u8::from(m_acr)),
        f64::from(u8::from(t_acr)),
        f64::from(u8::from(acronym_match)),
        f64::from(u8::from(exact)),
        min_edit(&fold(&m_joined), &fold(&t_joined)) as f64,
        partial as f64,
    ])
}

/// Gaussian RBF expansion of a scalar over 10 fixed centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfBinner {
    centers: Vec<f64>,
    width: f64,
}

impl RbfBinner {
    pub fn new(centers: Vec<f64>, width: f64) -> Result<Self> {
        if centers.len() != RBF_BINS {
            return Err(Error::data(format!(
                "binner needs {RBF_BINS} centers, got {}",
                centers.len()
            )));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::data(format!(
                "binner width must be positive, got {width}"
            )));
        }
        if centers
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::data("binner centers must be strictly increasing"));
        }
        Ok(RbfBinner { centers, width })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Writes the expansion of `x` into `out` (length [`RBF_BINS`]).
    /// Inputs beyond one width outside the outer centers saturate.
    pub fn bin_into(&self, x: f64, out: &mut [f64]) {
        let lo = self.centers[0] - self.width;
        let hi = self.centers[RBF_BINS - 1] + self.width;
        let x = x.clamp(lo, hi);
        let denom = 2.0 * self.width * self.width;
        for (o, c) in out.iter_mut().zip(&self.centers) {
            *o = (-(x - c).powi(2) / denom).exp();
        }
    }
}

/// Centers evenly spaced over the training range, width equal to the
/// spacing. A constant input is spread over `[v − 0.5, v + 0.5]`.
pub fn fit_binner(values: &[f64]) -> Result<RbfBinner> {
    if values.is_empty() {
        return Err(Error::data("cannot fit a binner on no values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("cannot fit a binner on non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if max > min {
        (min, max)
    } else {
        (min - 0.5, min + 0.5)
    };
    let spacing = (hi - lo) / (RBF_BINS - 1) as f64;
    let centers = (0..RBF_BINS).map(|j| lo + spacing * j as f64).collect();
    RbfBinner::new(centers, spacing)
}

pub fn rbf_bin(x: f64, binner: &RbfBinner) -> [f64; RBF_BINS] {
    let mut out = [0.0; RBF_BINS];
    binner.bin_into(x, &mut out);
    out
}
