//! The shared-manifold objective: multimodal triplet, reconstruction and
//! similarity-enhancement terms, plus the additional-sensor alignment loss.
//!
//! Every term is mean-reduced over the `K` triplets (or samples) of a batch.
//! The `record_*` functions build the term on a [`Tape`] so training can
//! differentiate through the encoders; the plain functions evaluate a term
//! on fixed latents and return its value with gradients for every input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Evaluated, Tape, Tensor, Var};

fn default_hinge() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Triplet margin, shared by the intra- and inter-sensor terms.
    #[serde(rename = "alpha")]
    pub margin_alpha: f64,
    /// Weight of the similarity-enhancement term.
    #[serde(rename = "gamma")]
    pub se_weight_gamma: f64,
    /// Clamp each triplet term at zero. Disable to get the raw difference.
    #[serde(rename = "hinge", default = "default_hinge")]
    pub hinge_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_alpha: 1.0,
            se_weight_gamma: 0.4,
            hinge_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let cfg = Self {
            margin_alpha: alpha,
            se_weight_gamma: gamma,
            hinge_enabled: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin_alpha >= 0.0 && self.margin_alpha.is_finite()) {
            return Err(Error::config(format!(
                "margin alpha {} must be non-negative",
                self.margin_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.se_weight_gamma) {
            return Err(Error::config(format!(
                "SE weight gamma {} must lie in [0, 1)",
                self.se_weight_gamma
            )));
        }
        Ok(())
    }
}

/// Values of every term of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_t: f64,
    pub l_e: f64,
    pub l_se: f64,
    pub total: f64,
    pub intra: f64,
    pub inter: f64,
    /// Anchor A, positive A, negative A, anchor B.
    pub recon: [f64; 4],
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_t, self.l_e, self.l_se, self.total].iter().all(|v| v.is_finite())
    }

    /// Running weighted mean used to summarize an epoch.
    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.l_t += weight * other.l_t;
        self.l_e += weight * other.l_e;
        self.l_se += weight * other.l_se;
        self.total += weight * other.total;
        self.intra += weight * other.intra;
        self.inter += weight * other.inter;
        for (a, b) in self.recon.iter_mut().zip(other.recon) {
            *a += weight * b;
        }
    }
}

/// Latent batches of one triplet minibatch, each `K×D`.
#[derive(Debug, Clone, Copy)]
pub struct TripletLatents {
    pub anchor_a: Var,
    pub positive_a: Var,
    pub negative_a: Var,
    pub anchor_b: Var,
}

/// Tape nodes of a recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub l_t: Var,
    pub l_e: Var,
    pub l_se: Option<Var>,
    pub intra: Var,
    pub inter: Var,
    pub recon: [Var; 4],
}

impl ObjectiveVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            l_t: tape.scalar(self.l_t),
            l_e: tape.scalar(self.l_e),
            l_se: self.l_se.map_or(0.0, |v| tape.scalar(v)),
            total: tape.scalar(self.total),
            intra: tape.scalar(self.intra),
            inter: tape.scalar(self.inter),
            recon: self.recon.map(|v| tape.scalar(v)),
        }
    }
}

fn check_rows(tape: &Tape, vars: &[Var], what: &str) -> Result<()> {
    let first = tape.value(vars[0]).dims2()?;
    for &v in &vars[1..] {
        let d = tape.value(v).dims2()?;
        if d != first {
            return Err(Error::dim(format!("{what}: batches {first:?} and {d:?}")));
        }
    }
    Ok(())
}

/// Mean over rows of `‖a−p‖² − ‖a−n‖² + alpha`, clamped at zero when `hinge`.
pub fn record_triplet(
    tape: &mut Tape,
    anchor: Var,
    positive: Var,
    negative: Var,
    alpha: f64,
    hinge: bool,
) -> Result<Var> {
    check_rows(tape, &[anchor, positive, negative], "triplet")?;
    let d_ap = tape.row_sq_dist(anchor, positive)?;
    let d_an = tape.row_sq_dist(anchor, negative)?;
    let diff = tape.sub(d_ap, d_an)?;
    let mut v = tape.add_scalar(diff, alpha);
    if hinge {
        v = tape.relu(v);
    }
    Ok(tape.mean(v))
}

/// Intra-sensor term on sensor A plus inter-sensor term with sensor B's
/// anchor against A's positive and negative. Returns `(l_t, intra, inter)`.
pub fn record_multimodal_triplet(
    tape: &mut Tape,
    z: &TripletLatents,
    cfg: &LossConfig,
) -> Result<(Var, Var, Var)> {
    check_rows(
        tape,
        &[z.anchor_a, z.positive_a, z.negative_a, z.anchor_b],
        "multimodal triplet",
    )?;
    let intra = record_triplet(
        tape,
        z.anchor_a,
        z.positive_a,
        z.negative_a,
        cfg.margin_alpha,
        cfg.hinge_enabled,
    )?;
    let inter = record_triplet(
        tape,
        z.anchor_b,
        z.positive_a,
        z.negative_a,
        cfg.margin_alpha,
        cfg.hinge_enabled,
    )?;
    let l_t = tape.add(intra, inter)?;
    Ok((l_t, intra, inter))
}

/// Mean over rows of `‖S − S̃‖²`.
pub fn record_reconstruction_term(tape: &mut Tape, original: Var, reconstructed: Var) -> Result<Var> {
    let d = tape.row_sq_dist(original, reconstructed)?;
    Ok(tape.mean(d))
}

/// `gamma` times the mean squared distance between paired anchors.
pub fn record_similarity(tape: &mut Tape, anchor_a: Var, anchor_b: Var, gamma: f64) -> Result<Var> {
    let d = tape.row_sq_dist(anchor_a, anchor_b)?;
    let m = tape.mean(d);
    Ok(tape.scale(m, gamma))
}

/// The full objective `L_T + L_E + L_SE`. `recon` holds
/// `(original, reconstructed)` for anchor A, positive A, negative A, anchor B.
pub fn record_objective(
    tape: &mut Tape,
    z: &TripletLatents,
    recon: [(Var, Var); 4],
    cfg: &LossConfig,
) -> Result<ObjectiveVars> {
    let (l_t, intra, inter) = record_multimodal_triplet(tape, z, cfg)?;
    let mut terms = [l_t; 4];
    for (slot, (orig, rec)) in terms.iter_mut().zip(recon) {
        *slot = record_reconstruction_term(tape, orig, rec)?;
    }
    let mut l_e = tape.add(terms[0], terms[1])?;
    l_e = tape.add(l_e, terms[2])?;
    l_e = tape.add(l_e, terms[3])?;
    let base = tape.add(l_t, l_e)?;
    let (total, l_se) = if cfg.se_weight_gamma == 0.0 {
        (base, None)
    } else {
        let se = record_similarity(tape, z.anchor_a, z.anchor_b, cfg.se_weight_gamma)?;
        (tape.add(base, se)?, Some(se))
    };
    Ok(ObjectiveVars {
        total,
        l_t,
        l_e,
        l_se,
        intra,
        inter,
        recon: terms,
    })
}

/// Mean over samples of `‖z_A − z_C‖² + ‖S_C − S̃_C‖²`.
pub fn record_sensor_c(
    tape: &mut Tape,
    z_a: Var,
    z_c: Var,
    original: Var,
    reconstructed: Var,
) -> Result<Var> {
    let latent = tape.row_sq_dist(z_a, z_c)?;
    let rec = tape.row_sq_dist(original, reconstructed)?;
    if tape.value(latent).rows() != tape.value(rec).rows() {
        return Err(Error::dim(format!(
            "{} latent rows against {} data rows",
            tape.value(latent).rows(),
            tape.value(rec).rows()
        )));
    }
    let sum = tape.add(latent, rec)?;
    Ok(tape.mean(sum))
}

/// A single triplet term on plain vectors.
pub fn triplet_term(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    alpha: f64,
    hinge: bool,
) -> Result<f64> {
    let d_ap = crate::numerics::sq_euclidean(anchor, positive)?;
    let d_an = crate::numerics::sq_euclidean(anchor, negative)?;
    let v = d_ap - d_an + alpha;
    Ok(if hinge { v.max(0.0) } else { v })
}

fn evaluate<const N: usize>(
    inputs: [&Tensor; N],
    build: impl FnOnce(&mut Tape, [Var; N]) -> Result<Var>,
) -> Result<Evaluated> {
    let mut tape = Tape::new();
    let vars = inputs.map(|t| tape.leaf(t));
    let out = build(&mut tape, vars)?;
    let grads = tape.backward(out)?;
    Ok(Evaluated {
        value: tape.scalar(out),
        grads: vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.tensor(v, t))
            .collect(),
    })
}

/// Multimodal triplet loss on `K×D` latent batches, with gradients for
/// `[anchor_a, positive_a, negative_a, anchor_b]`.
pub fn multimodal_triplet_loss(
    anchor_a: &Tensor,
    positive_a: &Tensor,
    negative_a: &Tensor,
    anchor_b: &Tensor,
    cfg: &LossConfig,
) -> Result<Evaluated> {
    evaluate([anchor_a, positive_a, negative_a, anchor_b], |tape, v| {
        let z = TripletLatents {
            anchor_a: v[0],
            positive_a: v[1],
            negative_a: v[2],
            anchor_b: v[3],
        };
        Ok(record_multimodal_triplet(tape, &z, cfg)?.0)
    })
}

/// Sum over pairs of the mean per-sample squared reconstruction error.
/// Gradients are ordered `original_0, reconstructed_0, original_1, ...`.
pub fn reconstruction_loss(pairs: &[(&Tensor, &Tensor)]) -> Result<Evaluated> {
    if pairs.is_empty() {
        return Err(Error::Usage("reconstruction loss of zero pairs".into()));
    }
    let mut tape = Tape::new();
    let mut vars = Vec::with_capacity(pairs.len() * 2);
    let mut total: Option<Var> = None;
    for (orig, rec) in pairs {
        if !orig.same_shape(rec) {
            return Err(Error::dim(format!(
                "reconstruction of {:?} against {:?}",
                orig.shape(),
                rec.shape()
            )));
        }
        let (o, r) = (tape.leaf(orig), tape.leaf(rec));
        vars.push((o, *orig));
        vars.push((r, *rec));
        let term = record_reconstruction_term(&mut tape, o, r)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let out = total.expect("at least one pair");
    let grads = tape.backward(out)?;
    Ok(Evaluated {
        value: tape.scalar(out),
        grads: vars.iter().map(|(v, t)| grads.tensor(*v, t)).collect(),
    })
}

/// `gamma · mean_k ‖z_A[k] − z_B[k]‖²`, gradients for `[anchor_a, anchor_b]`.
pub fn similarity_enhancement(anchor_a: &Tensor, anchor_b: &Tensor, gamma: f64) -> Result<Evaluated> {
    evaluate([anchor_a, anchor_b], |tape, v| {
        record_similarity(tape, v[0], v[1], gamma)
    })
}

/// Additional-sensor loss with gradients for `[z_a, z_c, original, reconstructed]`.
pub fn sensor_c_loss(
    z_a: &Tensor,
    z_c: &Tensor,
    original: &Tensor,
    reconstructed: &Tensor,
) -> Result<Evaluated> {
    evaluate([z_a, z_c, original, reconstructed], |tape, v| {
        record_sensor_c(tape, v[0], v[1], v[2], v[3])
    })
}

/// Full objective on fixed latents and reconstructions. Gradients follow the
/// order of the four latent batches, then each `(original, reconstructed)` pair.
pub fn commanet_loss(
    latents: [&Tensor; 4],
    recon: [(&Tensor, &Tensor); 4],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let zv = latents.map(|t| tape.leaf(t));
    let rv = recon.map(|(o, r)| (tape.leaf(o), tape.leaf(r)));
    let z = TripletLatents {
        anchor_a: zv[0],
        positive_a: zv[1],
        negative_a: zv[2],
        anchor_b: zv[3],
    };
    let obj = record_objective(&mut tape, &z, rv, cfg)?;
    let grads = tape.backward(obj.total)?;
    let mut out: Vec<Tensor> = zv
        .iter()
        .zip(latents)
        .map(|(&v, t)| grads.tensor(v, t))
        .collect();
    for ((o, r), (ot, rt)) in rv.iter().zip(recon) {
        out.push(grads.tensor(*o, ot));
        out.push(grads.tensor(*r, rt));
    }
    Ok((obj.breakdown(&tape), out))
}
