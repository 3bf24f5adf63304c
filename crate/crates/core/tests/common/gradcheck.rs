// Catalogue of gradient checks: every differentiable graph op, the loss
// functions and the two full training objectives, each compared against
// central differences of the f64 reference in `super`.

use rtkd::bbox::BBox;
use rtkd::config::{ModelConfig, PrompterToggles};
use rtkd::embedding::ImagePlane;
use rtkd::encoder::{self, encoder_layer, layer_prefix, mhsa};
use rtkd::losses::{
    build_gt_heatmap, feature_kd_loss, focal_loss_gt, giou_loss, gt_terms, l1_loss, response_kd_loss, student_total,
    teacher_total, FeatureKd, KdTerms, LayerSelector, LayerWeighting, LossWeights,
};
use rtkd::models::head::{self, head_forward, HeadVars};
use rtkd::models::{StudentModel, TeacherModel, TrackInputs};
use rtkd::numerics::rng::substream;
use rtkd::numerics::{uniform, Binder, Graph, ParamSet, ReduceMode, Rng, Tensor, Var};
use rtkd::prompter::{self, fovea, mmmp_forward, spatial_attention, token_attention, MmmpVars};
use rtkd::trainer::teacher_targets;

use rand::Rng as _;

use super::*;

pub const OP_TOL: f64 = 1e-3;
pub const LOSS_TOL: f64 = 2e-3;
pub const SEEDS: u64 = 100;

type GraphFn<'a> = dyn Fn(&mut Graph, &ParamSet, &[Var]) -> rtkd::Result<Var> + 'a;
type RefFn<'a> = dyn Fn(&Params, &[M]) -> Vec<f64> + 'a;

pub struct Case {
    pub params: ParamSet,
    pub inputs: Vec<Tensor>,
    /// Checked coordinates per parameter tensor; `None` checks all of them.
    pub per_tensor: Option<usize>,
}

impl Case {
    fn inputs(inputs: Vec<Tensor>) -> Self {
        Self {
            params: ParamSet::new(),
            inputs,
            per_tensor: None,
        }
    }

    fn with_params(params: ParamSet, inputs: Vec<Tensor>) -> Self {
        Self {
            params,
            inputs,
            per_tensor: None,
        }
    }
}

/// Runs `graph` forward and backward on a random projection of its output
/// and compares the gradients with differences of the same projection of
/// `reference`. Also checks the two forwards agree.
pub fn check_case(case: &Case, graph: &GraphFn, reference: &RefFn, rng: &mut Rng) -> Report {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.variable(t.clone())).collect();
    let y = graph(&mut g, &case.params, &vars).unwrap();
    let shape = g.shape(y).to_vec();
    let proj = if g.value(y).numel() == 1 {
        Tensor::filled(&shape, 1.0)
    } else {
        uniform(rng, &shape, -1.0, 1.0)
    };
    let r: Vec<f64> = proj.data().iter().map(|&v| v as f64).collect();
    let pv = g.constant(proj);
    let prod = g.mul(y, pv).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();

    let mut coords = Vec::new();
    let mut analytic = Vec::new();
    for (i, (v, t)) in vars.iter().zip(&case.inputs).enumerate() {
        let grad = g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
        for (k, gv) in grad.iter().enumerate() {
            coords.push((Key::Input(i), k));
            analytic.push(*gv as f64);
        }
    }
    let pgrads = case.params.gradients_from(&g);
    for (prm, grad) in case.params.iter().zip(&pgrads) {
        let n = prm.tensor.numel();
        let picks: Vec<usize> = match case.per_tensor {
            None => (0..n).collect(),
            Some(k) => (0..k.min(n)).map(|_| rng.random_range(0..n)).collect(),
        };
        for k in picks {
            coords.push((Key::Param(prm.name.clone()), k));
            analytic.push(grad[k] as f64);
        }
    }

    let state = State {
        params: params_of(&case.params),
        inputs: case.inputs.iter().map(M::from_tensor).collect(),
    };
    let f = |s: &State| -> f64 {
        let out = reference(&s.params, &s.inputs);
        assert_eq!(out.len(), r.len(), "reference output size");
        out.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let want = f(&state);
    let got = g.value(loss).item() as f64;
    assert!(
        (want - got).abs() <= 1e-4 * (1.0 + want.abs()),
        "forward mismatch: reference {want}, graph {got}"
    );
    let (numeric, smooth) = fd_grad(&f, &state, &coords);
    if std::env::var_os("GRAD_DEBUG").is_some() {
        for (((c, a), n), s) in coords.iter().zip(&analytic).zip(&numeric).zip(&smooth) {
            if (a - n).abs() > 1e-4 * (1.0 + n.abs()) || !s {
                eprintln!("{c:?} analytic {a:.6e} numeric {n:.6e} smooth {s}");
            }
        }
    }
    compare(&analytic, &numeric, &smooth)
}

pub struct OpCheck {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn(u64) -> Report,
}

/// All instances of one check; `rel` is the worst instance.
pub fn sweep(c: &OpCheck, seeds: u64) -> Report {
    (0..seeds).map(|s| (c.run)(s)).fold(Report::default(), Report::merge)
}

/// Non-smooth coordinates may be skipped, but at most 1 in 20. A single
/// ReLU preactivation within the step of zero already flags every weight
/// upstream of it.
pub fn passes(c: &OpCheck, r: &Report) -> bool {
    r.rel < c.tol && r.skipped * 20 <= r.checked + r.skipped && r.checked > 0
}

fn u(r: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    uniform(r, shape, lo, hi)
}

fn rng_for(seed: u64, name: &str) -> Rng {
    let tag = name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    substream(seed, tag)
}

/// Adds uniform noise of half-width `a` to every parameter value, so the
/// near-zero initial weights do not hide gradient paths.
pub fn jitter(params: &mut ParamSet, rng: &mut Rng, a: f32) {
    for p in params.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.random_range(-a..a);
        }
    }
}

fn vec_of(m: &M) -> Vec<f64> {
    m.d.clone()
}

// ----------------------------------------------------------------------
// elementary ops
// ----------------------------------------------------------------------

fn op_matmul(seed: u64) -> Report {
    let mut r = rng_for(seed, "matmul");
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0), u(&mut r, &[4, 5], -1.0, 1.0)]);
    check_case(&case, &|g, _, v| g.matmul(v[0], v[1]), &|_, x| matmul(&x[0], &x[1]).d, &mut r)
}

fn op_transpose(seed: u64) -> Report {
    let mut r = rng_for(seed, "transpose");
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0)]);
    check_case(&case, &|g, _, v| g.transpose(v[0]), &|_, x| transpose(&x[0]).d, &mut r)
}

fn op_binary(seed: u64) -> Report {
    let mut r = rng_for(seed, "binary");
    let kind = seed % 3;
    let rhs_shape: &[usize] = match (seed / 3) % 5 {
        0 => &[3, 4],
        1 => &[4],
        2 => &[1, 4],
        3 => &[3, 1],
        _ => &[1],
    };
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0), u(&mut r, rhs_shape, -1.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| match kind {
            0 => g.add(v[0], v[1]),
            1 => g.sub(v[0], v[1]),
            _ => g.mul(v[0], v[1]),
        },
        &|_, x| {
            let (a, b) = (&x[0], &x[1]);
            let mut out = Vec::new();
            for i in 0..a.r {
                for j in 0..a.c {
                    let rv = if b.r == a.r && b.c == a.c {
                        b.at(i, j)
                    } else if b.r == 1 && b.c == a.c {
                        b.at(0, j)
                    } else if b.c == 1 && b.r == a.r {
                        b.at(i, 0)
                    } else {
                        b.d[0]
                    };
                    let l = a.at(i, j);
                    out.push(match kind {
                        0 => l + rv,
                        1 => l - rv,
                        _ => l * rv,
                    });
                }
            }
            out
        },
        &mut r,
    )
}

fn op_scale(seed: u64) -> Report {
    let mut r = rng_for(seed, "scale");
    let s: f32 = r.random_range(-3.0..3.0);
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0)]);
    check_case(&case, &|g, _, v| Ok(g.scale(v[0], s)), &|_, x| x[0].map(|v| v * s as f64).d, &mut r)
}

fn op_relu(seed: u64) -> Report {
    let mut r = rng_for(seed, "relu");
    let case = Case::inputs(vec![u(&mut r, &[4, 5], -2.0, 2.0)]);
    check_case(&case, &|g, _, v| Ok(g.relu(v[0])), &|_, x| x[0].map(relu).d, &mut r)
}

fn op_gelu(seed: u64) -> Report {
    let mut r = rng_for(seed, "gelu");
    let case = Case::inputs(vec![u(&mut r, &[4, 5], -3.0, 3.0)]);
    check_case(&case, &|g, _, v| Ok(g.gelu(v[0])), &|_, x| x[0].map(gelu).d, &mut r)
}

fn op_sigmoid(seed: u64) -> Report {
    let mut r = rng_for(seed, "sigmoid");
    let case = Case::inputs(vec![u(&mut r, &[4, 5], -4.0, 4.0)]);
    check_case(&case, &|g, _, v| Ok(g.sigmoid(v[0])), &|_, x| x[0].map(sigmoid).d, &mut r)
}

fn op_softmax(seed: u64) -> Report {
    let mut r = rng_for(seed, "softmax");
    let axis = (seed % 2) as usize;
    let case = Case::inputs(vec![u(&mut r, &[4, 5], -3.0, 3.0)]);
    check_case(
        &case,
        &|g, _, v| g.softmax(v[0], axis),
        &|_, x| if axis == 1 { softmax_rows(&x[0]).d } else { softmax_cols(&x[0]).d },
        &mut r,
    )
}

fn op_reduce(seed: u64) -> Report {
    let mut r = rng_for(seed, "reduce");
    let axis = (seed % 2) as usize;
    let mode = if (seed / 2) % 2 == 0 { ReduceMode::Mean } else { ReduceMode::Max };
    let case = Case::inputs(vec![u(&mut r, &[4, 5], -2.0, 2.0)]);
    check_case(
        &case,
        &|g, _, v| g.reduce(v[0], axis, mode),
        &|_, x| {
            let m = if axis == 1 { x[0].clone() } else { transpose(&x[0]) };
            match mode {
                ReduceMode::Mean => row_means(&m),
                ReduceMode::Max => row_maxes(&m),
            }
        },
        &mut r,
    )
}

fn op_linear(seed: u64) -> Report {
    let mut r = rng_for(seed, "linear");
    let case = Case::inputs(vec![
        u(&mut r, &[3, 4], -1.0, 1.0),
        u(&mut r, &[4, 5], -1.0, 1.0),
        u(&mut r, &[5], -1.0, 1.0),
    ]);
    check_case(&case, &|g, _, v| g.linear(v[0], v[1], v[2]), &|_, x| linear(&x[0], &x[1], &x[2]).d, &mut r)
}

fn op_layer_norm(seed: u64) -> Report {
    let mut r = rng_for(seed, "layer_norm");
    let case = Case::inputs(vec![
        u(&mut r, &[3, 6], -2.0, 2.0),
        u(&mut r, &[6], 0.5, 1.5),
        u(&mut r, &[6], -0.5, 0.5),
    ]);
    check_case(
        &case,
        &|g, _, v| g.layer_norm(v[0], v[1], v[2]),
        &|_, x| layer_norm(&x[0], &x[1], &x[2]).d,
        &mut r,
    )
}

fn op_conv1d(seed: u64) -> Report {
    let mut r = rng_for(seed, "conv1d");
    let case = Case::inputs(vec![
        u(&mut r, &[2, 9], -1.0, 1.0),
        u(&mut r, &[2, 7], -1.0, 1.0),
        u(&mut r, &[1], -1.0, 1.0),
    ]);
    check_case(
        &case,
        &|g, _, v| g.conv1d_2to1(v[0], v[1], v[2]),
        &|_, x| conv_2to1(&x[0], &x[1], x[2].d[0]),
        &mut r,
    )
}

fn op_im2col(seed: u64) -> Report {
    let mut r = rng_for(seed, "im2col");
    let case = Case::inputs(vec![u(&mut r, &[12, 2], -1.0, 1.0)]);
    check_case(&case, &|g, _, v| g.im2col3x3(v[0], 3, 4), &|_, x| im2col(&x[0], 3, 4).d, &mut r)
}

fn op_concat(seed: u64) -> Report {
    let mut r = rng_for(seed, "concat");
    let rows = seed % 2 == 0;
    let (a, b): (&[usize], &[usize]) = if rows { (&[2, 3], &[4, 3]) } else { (&[3, 2], &[3, 4]) };
    let case = Case::inputs(vec![u(&mut r, a, -1.0, 1.0), u(&mut r, b, -1.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| if rows { g.concat_rows(&[v[0], v[1]]) } else { g.concat_cols(&[v[0], v[1]]) },
        &|_, x| {
            if rows {
                concat_rows(&[&x[0], &x[1]]).d
            } else {
                concat_cols(&[&x[0], &x[1]]).d
            }
        },
        &mut r,
    )
}

fn op_slice(seed: u64) -> Report {
    let mut r = rng_for(seed, "slice");
    let rows = seed % 2 == 0;
    let start = (seed / 2 % 3) as usize;
    let case = Case::inputs(vec![u(&mut r, &[5, 5], -1.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| if rows { g.slice_rows(v[0], start, 2) } else { g.slice_cols(v[0], start, 2) },
        &|_, x| if rows { x[0].rows(start, 2).d } else { x[0].cols(start, 2).d },
        &mut r,
    )
}

fn op_reshape_gather(seed: u64) -> Report {
    let mut r = rng_for(seed, "gather");
    let idx: Vec<usize> = (0..5).map(|_| r.random_range(0..12)).collect();
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| {
            let y = g.reshape(v[0], &[4, 3])?;
            g.gather(y, &idx)
        },
        &|_, x| idx.iter().map(|&i| x[0].d[i]).collect(),
        &mut r,
    )
}

fn op_sum_mean(seed: u64) -> Report {
    let mut r = rng_for(seed, "sum_mean");
    let case = Case::inputs(vec![u(&mut r, &[3, 4], -1.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| {
            let s = g.sum(v[0]);
            let m = g.mean(v[0]);
            let m = g.scale(m, 3.0);
            g.add(s, m)
        },
        &|_, x| {
            let s: f64 = x[0].d.iter().sum();
            vec![s + 3.0 * s / 12.0]
        },
        &mut r,
    )
}

// ----------------------------------------------------------------------
// modules
// ----------------------------------------------------------------------

/// 1 template + 4 search tokens of width 8.
fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        search_size: 8,
        template_size: 4,
        patch: 4,
        d_model: 8,
        layers: 1,
        heads: 2,
        mlp_ratio: 2,
        reduction: 2,
        fovea_lambda: 1.0,
        head_channels: 4,
        prompter: PrompterToggles::default(),
    }
}

fn encoder_case(seed: u64, name: &str) -> (Case, Rng) {
    let mut r = rng_for(seed, name);
    let cfg = tiny_cfg();
    let mut ps = ParamSet::new();
    encoder::init_params(&mut ps, &mut r, "t", &cfg).unwrap();
    jitter(&mut ps, &mut r, 0.4);
    let x = u(&mut r, &[cfg.n_tokens(), cfg.d_model], -1.0, 1.0);
    (Case::with_params(ps, vec![x]), r)
}

fn op_mhsa(seed: u64) -> Report {
    let (case, mut r) = encoder_case(seed, "mhsa");
    let layer = layer_prefix("t", 0);
    check_case(
        &case,
        &|g, ps, v| Ok(mhsa(g, &Binder::new(ps, true), &layer, v[0], 2)?.out),
        &|ps, x| super::mhsa(ps, &layer, &x[0], 2).0.d,
        &mut r,
    )
}

fn op_encoder_layer(seed: u64) -> Report {
    let (case, mut r) = encoder_case(seed, "encoder_layer");
    let layer = layer_prefix("t", 0);
    check_case(
        &case,
        &|g, ps, v| Ok(encoder_layer(g, &Binder::new(ps, true), &layer, v[0], 2)?.0),
        &|ps, x| super::encoder_layer(ps, &layer, &x[0], 2).d,
        &mut r,
    )
}

const PNAME: &str = "t/prompt/rgb/0";

fn prompter_case(seed: u64, name: &str, n_inputs: usize) -> (Case, Rng) {
    let mut r = rng_for(seed, name);
    let cfg = tiny_cfg();
    let mut ps = ParamSet::new();
    prompter::init_params(&mut ps, &mut r, PNAME, &cfg).unwrap();
    jitter(&mut ps, &mut r, 0.5);
    let inputs = (0..n_inputs)
        .map(|_| u(&mut r, &[cfg.n_tokens(), cfg.d_model], -1.0, 1.0))
        .collect();
    (Case::with_params(ps, inputs), r)
}

fn op_spatial(seed: u64) -> Report {
    let (case, mut r) = prompter_case(seed, "spatial", 1);
    check_case(
        &case,
        &|g, ps, v| {
            let p = MmmpVars::bind(g, &Binder::new(ps, true), PNAME)?;
            spatial_attention(g, &p, v[0])
        },
        &|ps, x| spatial(ps, PNAME, &x[0]).d,
        &mut r,
    )
}

fn op_token(seed: u64) -> Report {
    let (case, mut r) = prompter_case(seed, "token", 1);
    check_case(
        &case,
        &|g, ps, v| {
            let p = MmmpVars::bind(g, &Binder::new(ps, true), PNAME)?;
            token_attention(g, &p, v[0])
        },
        &|ps, x| token(ps, PNAME, &x[0]).d,
        &mut r,
    )
}

fn op_fovea(seed: u64) -> Report {
    let mut r = rng_for(seed, "fovea");
    let lambda: f32 = r.random_range(0.25..3.0);
    let case = Case::inputs(vec![u(&mut r, &[5, 4], -2.0, 2.0)]);
    check_case(
        &case,
        &|g, _, v| fovea(g, v[0], lambda),
        &|_, x| fovea_ref(&x[0], lambda as f64),
        &mut r,
    )
}

fn fovea_ref(h: &M, lambda: f64) -> Vec<f64> {
    super::fovea(h, lambda).d
}

fn op_mmmp(seed: u64) -> Report {
    let (case, mut r) = prompter_case(seed, "mmmp", 3);
    let lambda: f32 = r.random_range(0.5..2.0);
    let t = PrompterToggles {
        enabled: true,
        spatial: seed % 4 != 1,
        token: seed % 4 != 2,
        history: seed % 4 != 3,
    };
    let with_prev = seed % 5 != 0;
    check_case(
        &case,
        &|g, ps, v| {
            let p = MmmpVars::bind(g, &Binder::new(ps, true), PNAME)?;
            mmmp_forward(g, &p, v[0], v[1], with_prev.then_some(v[2]), lambda, t)
        },
        &|ps, x| {
            let prev = with_prev.then_some(&x[2]);
            mmmp(ps, PNAME, &x[0], &x[1], prev, lambda as f64, t).d
        },
        &mut r,
    )
}

fn op_head(seed: u64) -> Report {
    let mut r = rng_for(seed, "head");
    let cfg = ModelConfig {
        search_size: 12,
        ..tiny_cfg()
    };
    let mut ps = ParamSet::new();
    head::init_params(&mut ps, &mut r, "t", &cfg).unwrap();
    jitter(&mut ps, &mut r, 0.4);
    let feats = u(&mut r, &[cfg.n_search(), cfg.d_model], -1.0, 1.0);
    let case = Case::with_params(ps, vec![feats]);
    check_case(
        &case,
        &|g, ps, v| {
            let h = head_forward(g, &Binder::new(ps, true), "t", v[0], &cfg)?;
            g.concat_cols(&[h.score, h.offset, h.size])
        },
        &|ps, x| {
            let h = super::head(ps, "t", &x[0], &cfg);
            let mut out = Vec::new();
            for c in 0..cfg.n_search() {
                out.push(h.score[c]);
                out.extend_from_slice(&h.offset[2 * c..2 * c + 2]);
                out.extend_from_slice(&h.size[2 * c..2 * c + 2]);
            }
            out
        },
        &mut r,
    )
}

fn op_box_at(seed: u64) -> Report {
    let mut r = rng_for(seed, "box_at");
    let cfg = ModelConfig {
        search_size: 12,
        ..tiny_cfg()
    };
    let n = cfg.n_search();
    let peak = r.random_range(0..n);
    let case = Case::inputs(vec![u(&mut r, &[n, 2], 0.05, 0.95), u(&mut r, &[n, 2], 0.05, 0.95)]);
    check_case(
        &case,
        &|g, _, v| {
            let h = HeadVars {
                score: v[0],
                offset: v[0],
                size: v[1],
            };
            h.box_at(g, peak, &cfg)
        },
        &|_, x| {
            let gs = cfg.grid() as f64;
            let (i, j) = ((peak / cfg.grid()) as f64, (peak % cfg.grid()) as f64);
            let (w, h) = (x[1].d[2 * peak], x[1].d[2 * peak + 1]);
            let cx = (j + x[0].d[2 * peak]) / gs;
            let cy = (i + x[0].d[2 * peak + 1]) / gs;
            vec![cx - w / 2.0, cy - h / 2.0, w, h]
        },
        &mut r,
    )
}

// ----------------------------------------------------------------------
// losses
// ----------------------------------------------------------------------

fn random_box(r: &mut Rng, side: f64, min: f64, max: f64) -> BBox {
    let w = r.random_range(min..max);
    let h = r.random_range(min..max);
    let cx = r.random_range(w / 2.0..side - w / 2.0);
    let cy = r.random_range(h / 2.0..side - h / 2.0);
    BBox::from_center(cx, cy, w, h)
}

fn loss_giou(seed: u64) -> Report {
    let mut r = rng_for(seed, "giou");
    let gt = random_box(&mut r, 1.0, 0.1, 0.6);
    let p = random_box(&mut r, 1.0, 0.1, 0.6);
    let pred = Tensor::vector(p.to_array().iter().map(|&v| v as f32).collect());
    let case = Case::inputs(vec![pred]);
    check_case(
        &case,
        &|g, _, v| giou_loss(g, v[0], &gt),
        &|_, x| vec![giou([x[0].d[0], x[0].d[1], x[0].d[2], x[0].d[3]], gt.to_array())],
        &mut r,
    )
}

fn loss_l1(seed: u64) -> Report {
    let mut r = rng_for(seed, "l1");
    let target: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
    let case = Case::inputs(vec![u(&mut r, &[4], 0.0, 1.0)]);
    check_case(
        &case,
        &|g, _, v| l1_loss(g, v[0], &target),
        &|_, x| vec![l1(&x[0].d, &target)],
        &mut r,
    )
}

fn loss_focal(seed: u64) -> Report {
    let mut r = rng_for(seed, "focal");
    let (grid, patch) = (4, 4);
    let gt = random_box(&mut r, 16.0, 2.0, 12.0);
    let heat = build_gt_heatmap(&gt, grid, patch).unwrap();
    let case = Case::inputs(vec![u(&mut r, &[grid * grid], 0.02, 0.98)]);
    check_case(
        &case,
        &|g, _, v| focal_loss_gt(g, v[0], &heat),
        &|_, x| vec![focal(&x[0].d, &heatmap(gt.to_array(), grid, patch))],
        &mut r,
    )
}

fn loss_response(seed: u64) -> Report {
    let mut r = rng_for(seed, "response");
    let tau: f64 = r.random_range(1.0..3.0);
    let teacher = u(&mut r, &[16], 0.0, 1.0);
    let t64: Vec<f64> = teacher.data().iter().map(|&v| v as f64).collect();
    let case = Case::inputs(vec![u(&mut r, &[16], 0.02, 0.98)]);
    check_case(
        &case,
        &|g, _, v| response_kd_loss(g, &teacher, v[0], tau),
        &|_, x| vec![qfl(&t64, &x[0].d, tau)],
        &mut r,
    )
}

fn loss_feature(seed: u64) -> Report {
    let mut r = rng_for(seed, "feature");
    let opts = FeatureKd {
        selector: [LayerSelector::Even, LayerSelector::FirstHalf, LayerSelector::LastHalf, LayerSelector::All]
            [(seed % 4) as usize],
        weighting: if seed % 3 == 0 { LayerWeighting::LayerIndex } else { LayerWeighting::Uniform },
    };
    let layers: Vec<usize> = match opts.selector {
        LayerSelector::Even => vec![2, 4],
        LayerSelector::FirstHalf => vec![1, 2],
        LayerSelector::LastHalf => vec![3, 4],
        LayerSelector::All => vec![1, 2, 3, 4],
    };
    let teacher: Vec<(Tensor, Tensor)> = (0..4)
        .map(|_| (u(&mut r, &[3, 4], -1.0, 1.0), u(&mut r, &[3, 4], -1.0, 1.0)))
        .collect();
    let t64: Vec<(M, M)> = teacher.iter().map(|(a, b)| (M::from_tensor(a), M::from_tensor(b))).collect();
    let case = Case::inputs((0..4).map(|_| u(&mut r, &[6, 4], -1.0, 1.0)).collect());
    let by_index = opts.weighting == LayerWeighting::LayerIndex;
    check_case(
        &case,
        &|g, _, v| feature_kd_loss(g, &teacher, v, opts),
        &|_, x| vec![feature_kd(&t64, x, &layers, by_index)],
        &mut r,
    )
}

// ----------------------------------------------------------------------
// full objectives
// ----------------------------------------------------------------------

/// 4×4 search grid, 2×2 template grid, two layers of width 8.
pub fn small_cfg() -> ModelConfig {
    ModelConfig {
        search_size: 16,
        template_size: 8,
        patch: 4,
        d_model: 8,
        layers: 2,
        heads: 2,
        mlp_ratio: 2,
        reduction: 4,
        fovea_lambda: 1.0,
        head_channels: 4,
        prompter: PrompterToggles::default(),
    }
}

fn plane(r: &mut Rng, side: usize, channels: usize) -> ImagePlane {
    let data = (0..side * side * channels).map(|_| r.random_range(0.0..1.0)).collect();
    ImagePlane::new(side, side, channels, data).unwrap()
}

pub fn random_inputs(cfg: &ModelConfig, r: &mut Rng) -> TrackInputs {
    TrackInputs {
        z_rgb: plane(r, cfg.template_size, 3),
        x_rgb: plane(r, cfg.search_size, 3),
        z_tir: plane(r, cfg.template_size, 1),
        x_tir: plane(r, cfg.search_size, 1),
    }
}

const PER_TENSOR: usize = 2;

fn teacher_model(seed: u64, cfg: &ModelConfig, r: &mut Rng) -> TeacherModel {
    let mut m = TeacherModel::new(cfg.clone(), seed).unwrap();
    jitter(&mut m.params, r, 0.3);
    m
}

fn full_teacher(seed: u64) -> Report {
    let mut r = rng_for(seed, "teacher_total");
    let mut cfg = small_cfg();
    cfg.prompter.history = seed % 5 != 3;
    cfg.prompter.spatial = seed % 5 != 4;
    let m = teacher_model(seed, &cfg, &mut r);
    let inp = random_inputs(&cfg, &mut r);
    let gt = random_box(&mut r, cfg.search_size as f64, 3.0, 10.0);
    let w = LossWeights::default();
    let case = Case {
        params: m.params.clone(),
        inputs: vec![],
        per_tensor: Some(PER_TENSOR),
    };
    check_case(
        &case,
        &|g, ps, _| {
            let m = TeacherModel {
                cfg: cfg.clone(),
                params: ps.clone(),
            };
            let f = m.forward(g, &inp, true)?;
            let t = gt_terms(g, &f.head, &gt, &cfg)?;
            teacher_total(g, &t, &w)
        },
        &|ps, _| {
            let o = teacher(ps, &cfg, &inp);
            let (fo, gi, l) = label_terms(&o.head, gt.to_array(), &cfg);
            vec![fo + w.giou * gi + w.l1 * l]
        },
        &mut r,
    )
}

fn full_student(seed: u64) -> Report {
    let mut r = rng_for(seed, "student_total");
    let cfg = small_cfg();
    let teacher_m = teacher_model(seed, &cfg, &mut r);
    let mut s = StudentModel::new(cfg.clone(), seed).unwrap();
    jitter(&mut s.params, &mut r, 0.3);
    let inp = random_inputs(&cfg, &mut r);
    let gt = random_box(&mut r, cfg.search_size as f64, 3.0, 10.0);
    let targets = teacher_targets(&teacher_m, &inp).unwrap();
    let t_score: Vec<f64> = targets.score.data().iter().map(|&v| v as f64).collect();
    let t_layers: Vec<(M, M)> = targets
        .layers
        .iter()
        .map(|(a, b)| (M::from_tensor(a), M::from_tensor(b)))
        .collect();
    let opts = if seed % 2 == 0 {
        FeatureKd::default()
    } else {
        FeatureKd {
            selector: LayerSelector::All,
            weighting: LayerWeighting::LayerIndex,
        }
    };
    let kd_layers: Vec<usize> = if seed % 2 == 0 { vec![2] } else { vec![1, 2] };
    let w = LossWeights::default();
    let case = Case {
        params: s.params.clone(),
        inputs: vec![],
        per_tensor: Some(PER_TENSOR),
    };
    check_case(
        &case,
        &|g, ps, _| {
            let m = StudentModel {
                cfg: cfg.clone(),
                params: ps.clone(),
            };
            let f = m.forward(g, &inp, true)?;
            let t = gt_terms(g, &f.head, &gt, &cfg)?;
            let rm = response_kd_loss(g, &targets.score, f.head.score, w.tau)?;
            let mf = feature_kd_loss(g, &targets.layers, &f.layers, opts)?;
            student_total(g, &t, &KdTerms { rm, mf }, &w)
        },
        &|ps, _| {
            let o = student(ps, &cfg, &inp);
            let (fo, gi, l) = label_terms(&o.head, gt.to_array(), &cfg);
            let rm = qfl(&t_score, &o.head.score, w.tau);
            let mf = feature_kd(&t_layers, &o.layers, &kd_layers, seed % 2 == 1);
            vec![fo + w.giou * gi + w.l1 * l + w.rm * rm + w.mf * mf]
        },
        &mut r,
    )
}

pub fn catalogue() -> Vec<OpCheck> {
    let op = |name, run| OpCheck { name, tol: OP_TOL, run };
    let loss = |name, run| OpCheck { name, tol: LOSS_TOL, run };
    vec![
        op("matmul", op_matmul as fn(u64) -> Report),
        op("transpose", op_transpose),
        op("add/sub/mul", op_binary),
        op("scale", op_scale),
        op("relu", op_relu),
        op("gelu", op_gelu),
        op("sigmoid", op_sigmoid),
        op("softmax", op_softmax),
        op("reduce", op_reduce),
        op("linear", op_linear),
        op("layer_norm", op_layer_norm),
        op("conv1d_2to1", op_conv1d),
        op("im2col3x3", op_im2col),
        op("concat", op_concat),
        op("slice", op_slice),
        op("reshape/gather", op_reshape_gather),
        op("sum/mean", op_sum_mean),
        op("mhsa", op_mhsa),
        op("encoder_layer", op_encoder_layer),
        op("spatial_attention", op_spatial),
        op("token_attention", op_token),
        op("fovea", op_fovea),
        op("mmmp_forward", op_mmmp),
        op("head_forward", op_head),
        op("box_at", op_box_at),
        loss("giou_loss", loss_giou),
        loss("l1_loss", loss_l1),
        loss("focal_loss", loss_focal),
        loss("response_kd", loss_response),
        loss("feature_kd", loss_feature),
        loss("teacher_total", full_teacher),
        loss("student_total", full_student),
    ]
}
