//! Cyclic interaction between the language vector and the fused maps.
//!
//! One round updates, per pyramid level `i`:
//!
//! ```text
//! L^i_{m+1} = VLM(L^i_m, F^i_m)
//! F^i_{m+1} = LVM(L^i_{m+1}, F^i_m, F^j_m, F^k_m)      j, k ≠ i
//! ```
//!
//! LVM reads the round-`m` maps of all three levels, so the three updates of
//! a round are independent of each other. A cycle is `rounds` such rounds;
//! every (cycle, round, level) owns its own parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::LEVELS;
use crate::error::{Error, Result};
use crate::params::{Forward, Params};
use crate::tensor::Var;

pub const L2_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CimConfig {
    pub c_l: usize,
    /// Fused map width `C_v`.
    pub c_v: usize,
    /// Shared attention width `C`; defaults to `C_v`.
    pub c_attn: usize,
    pub rounds: usize,
    pub cycles: usize,
}

/// Language and fused features of all three levels after `round` rounds.
#[derive(Debug, Clone, Copy)]
pub struct CimState {
    pub lang: [Var; 3],
    pub fused: [Var; 3],
    pub round: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct VlmOutput {
    /// Updated unit-norm language vector, `[C_l]`.
    pub lang: Var,
    /// Affinity scores `S`, `[HW]`.
    pub scores: Var,
    /// Attention weights `A = Softmax(S / sqrt(C))`, `[HW]`.
    pub attention: Var,
    /// Attended feature `A_c = A · F`, `[1, C_v]`.
    pub attended: Var,
}

pub fn vlm_prefix(cycle: usize, round: usize, level: usize) -> String {
    format!("cim.c{cycle}.r{round}.l{level}.vlm")
}

pub fn lvm_prefix(cycle: usize, round: usize, level: usize, source: usize) -> String {
    format!("cim.c{cycle}.r{round}.l{level}.lvm.from{source}")
}

pub fn init_vlm<R: Rng>(
    cfg: &CimConfig,
    prefix: &str,
    params: &mut Params,
    rng: &mut R,
) -> Result<()> {
    let (cl, cv, c) = (cfg.c_l, cfg.c_v, cfg.c_attn);
    params.init_fan_in(format!("{prefix}.theta.w"), &[cl, c], cl, 1.0, rng)?;
    params.init_const(format!("{prefix}.theta.b"), &[c], 0.0)?;
    params.init_fan_in(format!("{prefix}.phi.w"), &[cv, c], cv, 1.0, rng)?;
    params.init_const(format!("{prefix}.phi.b"), &[c], 0.0)?;
    params.init_fan_in(format!("{prefix}.out.w"), &[cl + cv, cl], cl + cv, 1.0, rng)?;
    params.init_const(format!("{prefix}.out.b"), &[cl], 0.0)
}

pub fn init_gate<R: Rng>(
    cfg: &CimConfig,
    prefix: &str,
    params: &mut Params,
    rng: &mut R,
) -> Result<()> {
    params.init_fan_in(
        format!("{prefix}.w"),
        &[cfg.c_l, cfg.c_v],
        cfg.c_l,
        1.0,
        rng,
    )?;
    params.init_const(format!("{prefix}.b"), &[cfg.c_v], 0.0)
}

pub fn init_cim<R: Rng>(cfg: &CimConfig, params: &mut Params, rng: &mut R) -> Result<()> {
    for cycle in 0..cfg.cycles {
        for round in 0..cfg.rounds {
            for level in LEVELS {
                init_vlm(cfg, &vlm_prefix(cycle, round, level), params, rng)?;
                for source in LEVELS.into_iter().filter(|&s| s != level) {
                    init_gate(cfg, &lvm_prefix(cycle, round, level, source), params, rng)?;
                }
            }
        }
    }
    Ok(())
}

/// Vision-guided language update.
pub fn vlm(
    fx: &mut Forward<'_>,
    cfg: &CimConfig,
    prefix: &str,
    lang: Var,
    fused: Var,
) -> Result<VlmOutput> {
    let s = fx.g.shape(fused).to_vec();
    if s.len() != 3 || s[2] != cfg.c_v {
        return Err(Error::shape(
            "vlm",
            format!("fused {s:?}, expected C_v = {}", cfg.c_v),
        ));
    }
    let hw = s[0] * s[1];
    let flat = fx.g.reshape(fused, &[hw, cfg.c_v])?;
    let l_row = fx.g.reshape(lang, &[1, cfg.c_l])?;
    let q = fx.linear(l_row, &format!("{prefix}.theta"))?;
    let k = fx.linear(flat, &format!("{prefix}.phi"))?;
    let qt = fx.g.transpose(q)?;
    let scores = fx.g.matmul(k, qt)?;
    let scores = fx.g.reshape(scores, &[hw])?;
    let attention = fx.g.softmax(scores, (cfg.c_attn as f64).sqrt())?;
    let a_row = fx.g.reshape(attention, &[1, hw])?;
    let attended = fx.g.matmul(a_row, flat)?;
    let cat = fx.g.concat(&[l_row, attended], 1)?;
    let y = fx.linear(cat, &format!("{prefix}.out"))?;
    let y = fx.g.reshape(y, &[cfg.c_l])?;
    let lang = fx.g.l2_normalize(y, L2_EPS)?;
    Ok(VlmOutput {
        lang,
        scores,
        attention,
        attended,
    })
}

/// Language-guided gated aggregation of the other two levels into level `i`.
/// `others` pairs each source level id with its map.
pub fn lvm(
    fx: &mut Forward<'_>,
    prefix_of: impl Fn(usize) -> String,
    target: usize,
    lang: Var,
    fused: Var,
    others: [(usize, Var); 2],
) -> Result<Var> {
    if others.iter().any(|(lvl, _)| *lvl == target) || others[0].0 == others[1].0 {
        return Err(Error::InvalidArgument(format!(
            "lvm source levels {:?} must differ from target {target} and each other",
            [others[0].0, others[1].0]
        )));
    }
    let c_l = fx.g.value(lang).numel();
    let l_row = fx.g.reshape(lang, &[1, c_l])?;
    let mut out = fused;
    for (source, map) in others {
        let gate = fx.linear(l_row, &prefix_of(source))?;
        let gate = fx.g.sigmoid(gate)?;
        let gated = fx.g.mul_row(map, gate)?;
        out = fx.g.add(out, gated)?;
    }
    Ok(out)
}

fn others_of(i: usize, fused: &[Var; 3]) -> [(usize, Var); 2] {
    let mut it = (0..3).filter(|&j| j != i).map(|j| (LEVELS[j], fused[j]));
    [
        it.next().expect("two others"),
        it.next().expect("two others"),
    ]
}

/// One synchronous round: all VLM updates, then all LVM updates reading the
/// pre-round maps.
pub fn cim_round(
    fx: &mut Forward<'_>,
    cfg: &CimConfig,
    cycle: usize,
    round: usize,
    state: CimState,
) -> Result<CimState> {
    let mut lang = state.lang;
    for (i, level) in LEVELS.iter().enumerate() {
        lang[i] = vlm(
            fx,
            cfg,
            &vlm_prefix(cycle, round, *level),
            state.lang[i],
            state.fused[i],
        )?
        .lang;
    }
    let mut fused = state.fused;
    for (i, &level) in LEVELS.iter().enumerate() {
        fused[i] = lvm(
            fx,
            |src| lvm_prefix(cycle, round, level, src),
            level,
            lang[i],
            state.fused[i],
            others_of(i, &state.fused),
        )?;
    }
    Ok(CimState {
        lang,
        fused,
        round: state.round + 1,
    })
}

pub fn cim_forward(
    fx: &mut Forward<'_>,
    cfg: &CimConfig,
    l0: Var,
    fused0: [Var; 3],
) -> Result<CimState> {
    if cfg.rounds < 1 || cfg.cycles < 1 {
        return Err(Error::InvalidArgument(
            "rounds and cycles must be >= 1".into(),
        ));
    }
    let mut state = CimState {
        lang: [l0; 3],
        fused: fused0,
        round: 0,
    };
    for cycle in 0..cfg.cycles {
        for round in 0..cfg.rounds {
            state = cim_round(fx, cfg, cycle, round, state)?;
        }
    }
    Ok(state)
}
