#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use resdistill::distill::{distill_loss, DistillConfig};
use resdistill::model::{Model, ModelConfig};
use resdistill::resize::ResizeMode;
use resdistill::seed;
use resdistill::tensor::{finite_diff_check, Tape, Tensor, Var};
use resdistill::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform in ±[0.1, 1], keeping ReLU inputs away from the kink.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        stage_widths: vec![4, 8],
        blocks_per_stage: 1,
        num_classes: 3,
        num_groups: 2,
        input_channels: 3,
    }
}

type GradCheck = Box<dyn Fn(u64) -> Result<f64>>;

fn grad_of<F>(f: F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    finite_diff_check(f, &x, FD_STEP)
}

/// Every differentiable tape op, checked against central differences with
/// respect to each of its inputs, plus the full distillation loss through a
/// model forward pass. Returns the worst relative error per check over
/// `seeds` random draws.
pub fn gradient_suite(seeds: u64) -> Result<Vec<(&'static str, f64)>> {
    let checks: Vec<(&'static str, GradCheck)> = vec![
        (
            "conv2d/input",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "conv/input");
                let w = rand_tensor(&[4, 3, 3, 3], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[2, 3, 5, 5], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                        let y = t.conv2d(v, w, b, 2, 1)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "conv2d/weight",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "conv/weight");
                let x = rand_tensor(&[2, 3, 5, 5], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let w = rand_tensor(&[4, 3, 3, 3], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                        let y = t.conv2d(x, v, b, 1, 1)?;
                        Ok(t.sum_squares(y))
                    },
                    w,
                )
            }),
        ),
        (
            "conv2d/bias",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "conv/bias");
                let x = rand_tensor(&[2, 3, 4, 4], &mut r, -1.0, 1.0);
                let w = rand_tensor(&[4, 3, 1, 1], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                        let y = t.conv2d(x, w, v, 2, 0)?;
                        Ok(t.sum_squares(y))
                    },
                    b,
                )
            }),
        ),
        (
            "linear/input",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "linear/input");
                let w = rand_tensor(&[4, 5], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[3, 5], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                        let y = t.linear(v, w, b)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "linear/weight",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "linear/weight");
                let x = rand_tensor(&[3, 5], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let w = rand_tensor(&[4, 5], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                        let y = t.linear(x, v, b)?;
                        Ok(t.sum_squares(y))
                    },
                    w,
                )
            }),
        ),
        (
            "linear/bias",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "linear/bias");
                let x = rand_tensor(&[3, 5], &mut r, -1.0, 1.0);
                let w = rand_tensor(&[4, 5], &mut r, -1.0, 1.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                        let y = t.linear(x, w, v)?;
                        Ok(t.sum_squares(y))
                    },
                    b,
                )
            }),
        ),
        (
            "relu",
            Box::new(|sd| {
                let x = rand_away_from_zero(&[2, 3, 4], &mut seed::rng(sd, "relu"));
                grad_of(
                    |t, v| {
                        let y = t.relu(v);
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "add",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "add");
                let other = rand_tensor(&[2, 5], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[2, 5], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let o = t.constant(other.clone());
                        let y = t.add(o, v)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "scale",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "scale");
                let f = r.random_range(-3.0..3.0);
                let x = rand_tensor(&[7], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let y = t.scale(v, f);
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "group_norm/input",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "gn/input");
                let g = rand_tensor(&[4], &mut r, 0.5, 1.5);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let w = rand_tensor(&[2, 4, 3, 3], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[2, 4, 3, 3], &mut r, -2.0, 2.0);
                grad_of(
                    move |t, v| {
                        let (g, b, w) = (t.constant(g.clone()), t.constant(b.clone()), t.constant(w.clone()));
                        let y = t.group_norm(v, g, b, 2, 1e-5)?;
                        // Weighted sum so the upstream gradient is not a function of y alone.
                        let y = t.add(y, w)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "group_norm/gamma",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "gn/gamma");
                let x = rand_tensor(&[2, 4, 3, 3], &mut r, -2.0, 2.0);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                let g = rand_tensor(&[4], &mut r, 0.5, 1.5);
                grad_of(
                    move |t, v| {
                        let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                        let y = t.group_norm(x, v, b, 2, 1e-5)?;
                        Ok(t.sum_squares(y))
                    },
                    g,
                )
            }),
        ),
        (
            "group_norm/beta",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "gn/beta");
                let x = rand_tensor(&[2, 4, 3, 3], &mut r, -2.0, 2.0);
                let g = rand_tensor(&[4], &mut r, 0.5, 1.5);
                let b = rand_tensor(&[4], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let (x, g) = (t.constant(x.clone()), t.constant(g.clone()));
                        let y = t.group_norm(x, g, v, 4, 1e-5)?;
                        Ok(t.sum_squares(y))
                    },
                    b,
                )
            }),
        ),
        (
            "global_avg_pool",
            Box::new(|sd| {
                let x = rand_tensor(&[2, 3, 4, 5], &mut seed::rng(sd, "gap"), -1.0, 1.0);
                grad_of(
                    |t, v| {
                        let y = t.global_avg_pool(v)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "softmax_with_temperature",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "softmax");
                let temp = [1.0, 2.0, 4.0, 8.0][r.random_range(0..4)];
                let w = rand_tensor(&[3, 4], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[3, 4], &mut r, -3.0, 3.0);
                grad_of(
                    move |t, v| {
                        let y = t.softmax_with_temperature(v, temp)?;
                        let w = t.constant(w.clone());
                        let y = t.add(y, w)?;
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "kl_divergence/p",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "kl/p");
                let q = rand_tensor(&[2, 4], &mut r, -2.0, 2.0);
                let x = rand_tensor(&[2, 4], &mut r, -2.0, 2.0);
                grad_of(
                    move |t, v| {
                        let q = t.constant(q.clone());
                        let q = t.softmax_with_temperature(q, 1.0)?;
                        let p = t.softmax_with_temperature(v, 1.0)?;
                        t.kl_divergence(p, q)
                    },
                    x,
                )
            }),
        ),
        (
            "kl_divergence/q",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "kl/q");
                let p = rand_tensor(&[2, 4], &mut r, -2.0, 2.0);
                let x = rand_tensor(&[2, 4], &mut r, -2.0, 2.0);
                grad_of(
                    move |t, v| {
                        let p = t.constant(p.clone());
                        let p = t.softmax_with_temperature(p, 1.0)?;
                        let q = t.softmax_with_temperature(v, 1.0)?;
                        t.kl_divergence(p, q)
                    },
                    x,
                )
            }),
        ),
        (
            "soft_loss",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "soft");
                let temp = [1.0, 2.0, 4.0, 8.0][r.random_range(0..4)];
                let teacher = rand_tensor(&[3, 3], &mut r, -4.0, 4.0);
                let x = rand_tensor(&[3, 3], &mut r, -4.0, 4.0);
                grad_of(
                    move |t, v| {
                        let tl = t.constant(teacher.clone());
                        t.soft_loss(tl, v, temp)
                    },
                    x,
                )
            }),
        ),
        (
            "mse_loss",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "mse");
                let target = rand_tensor(&[2, 3, 2, 2], &mut r, -1.0, 1.0);
                let x = rand_tensor(&[2, 3, 2, 2], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let c = t.constant(target.clone());
                        t.mse_loss(v, c)
                    },
                    x,
                )
            }),
        ),
        (
            "cross_entropy_loss",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "ce");
                let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
                let x = rand_tensor(&[4, 3], &mut r, -3.0, 3.0);
                grad_of(move |t, v| t.cross_entropy_loss(v, &labels), x)
            }),
        ),
        (
            "sum",
            Box::new(|sd| {
                let x = rand_tensor(&[5], &mut seed::rng(sd, "sum"), -1.0, 1.0);
                grad_of(
                    |t, v| {
                        let y = t.sum(v);
                        Ok(t.sum_squares(y))
                    },
                    x,
                )
            }),
        ),
        (
            "distill_loss/composed",
            Box::new(|sd| {
                let mut r = seed::rng(sd, "composed");
                let mcfg = tiny_model_config();
                let teacher = Model::<f64>::build(&mcfg, seed::derive(sd, "teacher"))?;
                let student = Model::<f64>::build(&mcfg, seed::derive(sd, "student"))?;
                let t_in = rand_tensor(&[1, 3, 16, 16], &mut r, -1.0, 1.0);
                let t_out = teacher.infer(&t_in)?;
                let cfg = DistillConfig {
                    temperature: [1.0, 2.0, 4.0, 8.0][r.random_range(0..4)],
                    resize_mode: ResizeMode::ALL[r.random_range(0..4)],
                    soft_weight: r.random_range(0.5..2.0),
                    pixel_weight: r.random_range(0.5..2.0),
                    ..DistillConfig::default()
                };
                let x = rand_tensor(&[1, 3, 8, 8], &mut r, -1.0, 1.0);
                grad_of(
                    move |t, v| {
                        let out = student.forward(t, v, false)?;
                        Ok(distill_loss(t, &t_out, out, &cfg)?.total)
                    },
                    x,
                )
            }),
        ),
    ];
    let mut out = Vec::new();
    for (name, check) in checks {
        let mut worst: f64 = 0.0;
        for sd in 0..seeds {
            worst = worst.max(check(sd)?);
        }
        out.push((name, worst));
    }
    Ok(out)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn grads_of(model: &Model<f64>) -> Vec<f64> {
    model.params().iter().flat_map(|p| p.accumulated_grad.clone()).collect()
}

/// Relative L2 difference between the parameter gradient of one batch of
/// `k` distillation samples and the sum of `k` per-sample backward passes
/// each scaled by `1/k`.
pub fn accumulation_error(k: usize, seed_value: u64) -> Result<f64> {
    let mcfg = tiny_model_config();
    let teacher = Model::<f64>::build(&mcfg, seed::derive(seed_value, "teacher"))?;
    let mut student = Model::<f64>::build(&mcfg, seed::derive(seed_value, "student"))?;
    let mut r = seed::rng(seed_value, "accumulation");
    let t_in: Vec<Tensor<f64>> = (0..k).map(|_| rand_tensor(&[3, 16, 16], &mut r, -1.0, 1.0)).collect();
    let s_in: Vec<Tensor<f64>> = (0..k).map(|_| rand_tensor(&[3, 8, 8], &mut r, -1.0, 1.0)).collect();
    let cfg = DistillConfig::default();

    let t_batch = teacher.infer(&Tensor::stack(&t_in)?)?;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::stack(&s_in)?);
    let out = student.forward(&mut tape, x, true)?;
    let loss = distill_loss(&mut tape, &t_batch, out, &cfg)?;
    student.params_mut().clear_grads();
    tape.backward_into(loss.total, student.params_mut())?;
    let full = grads_of(&student);

    student.params_mut().clear_grads();
    for (ti, si) in t_in.iter().zip(&s_in) {
        let t_out = teacher.infer(ti)?;
        let mut tape = Tape::new();
        let x = tape.constant(si.clone().unsqueeze0());
        let out = student.forward(&mut tape, x, true)?;
        let loss = distill_loss(&mut tape, &t_out, out, &cfg)?;
        let scaled = tape.scale(loss.total, 1.0 / k as f64);
        tape.backward_into(scaled, student.params_mut())?;
    }
    Ok(rel_err(&grads_of(&student), &full))
}

/// Outcome of one measured property.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

pub fn check(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok,
        detail: detail.into(),
    }
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.ok)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

fn near(name: &str, got: f64, want: f64, tol: f64) -> Check {
    check(
        name,
        (got - want).abs() <= tol,
        format!("got {got:.9}, want {want:.9} ± {tol:e}"),
    )
}

fn logits(v: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
}

pub fn loss_checks() -> Result<Vec<Check>> {
    use resdistill::model::ForwardValues;
    use resdistill::tensor::soft_loss;
    let soft = |t: &[f64], s: &[f64], temp: f64| -> Result<f64> { soft_loss(&logits(t), &logits(s), temp)?.item() };
    let mut out = vec![
        near(
            "soft_loss identity",
            soft(&[0.3, -1.2, 2.0], &[0.3, -1.2, 2.0], 4.0)?,
            0.0,
            1e-6,
        ),
        near(
            "soft_loss swapped T=1",
            soft(&[2.0, 0.0], &[0.0, 2.0], 1.0)?,
            2.0 * 1f64.tanh(),
            1e-6,
        ),
        near(
            "soft_loss swapped T=2",
            soft(&[2.0, 0.0], &[0.0, 2.0], 2.0)?,
            4.0 * 0.5f64.tanh(),
            1e-6,
        ),
    ];
    let teacher = ForwardValues {
        feature_map: Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4])?,
        logits: logits(&[2.0, 0.0]),
    };
    let student = ForwardValues {
        feature_map: Tensor::new(vec![1, 1, 1, 1], vec![0.0])?,
        logits: logits(&[0.0, 2.0]),
    };
    let cfg = DistillConfig {
        temperature: 1.0,
        resize_mode: ResizeMode::MpAndInt,
        ..DistillConfig::default()
    };
    let (total, _, pixel) = resdistill::distill::distill_loss_values(&teacher, &student, &cfg)?;
    out.push(near("composed pixel term", pixel, 1.0, 1e-12));
    out.push(near("composed total", total, 1.0 + 2.0 * 1f64.tanh(), 1e-6));
    Ok(out)
}

fn max_dev(
    t: &Tensor<f64>,
    f: impl Fn(usize, usize) -> f64,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> f64 {
    let (h, w) = (t.shape()[t.ndim() - 2], t.shape()[t.ndim() - 1]);
    let mut worst: f64 = 0.0;
    for plane in t.data().chunks(h * w) {
        for y in rows.clone() {
            for x in cols.clone() {
                worst = worst.max((plane[y * w + x] - f(y, x)).abs());
            }
        }
    }
    worst
}

pub fn resampler_checks() -> Result<Vec<Check>> {
    use resdistill::data::{build_pyramid, generate, level_side, MagTag, SynthConfig};
    use resdistill::resize::{adaptive_max_pool, bicubic_resize, lanczos_resize};
    let mut out = Vec::new();

    let mut worst = [0.0f64; 3];
    let mut r = seed::rng(0, "constant");
    for _ in 0..20 {
        let (h, w) = (r.random_range(5..40), r.random_range(5..40));
        let c = r.random_range(0.0..1.0);
        let img = Tensor::<f64>::full(vec![3, h, w], c);
        let (oh, ow) = (r.random_range(1..60), r.random_range(1..60));
        let f = |_: usize, _: usize| c;
        worst[0] = worst[0].max(max_dev(&lanczos_resize(&img, oh, ow)?, f, 0..oh, 0..ow));
        worst[1] = worst[1].max(max_dev(&bicubic_resize(&img, oh, ow)?, f, 0..oh, 0..ow));
        let (ph, pw) = (oh.min(h), ow.min(w));
        worst[2] = worst[2].max(max_dev(&adaptive_max_pool(&img, ph, pw)?, f, 0..ph, 0..pw));
    }
    for (name, err) in ["lanczos", "bicubic", "max-pool"].iter().zip(worst) {
        out.push(check(
            format!("{name} preserves constants"),
            err <= 1e-6,
            format!("max error {err:e}"),
        ));
    }

    // f(y, x) = a·y + b·x + c sampled at pixel centres, then halved. Output
    // pixel j sits at source coordinate 2j + 0.5; its four taps stay inside
    // the image for 1 <= j <= n/2 - 2.
    let (a, b, c) = (0.37, -0.81, 2.5);
    let n = 24;
    let ramp = Tensor::new(
        vec![1, n, n],
        (0..n * n)
            .map(|i| a * (i / n) as f64 + b * (i % n) as f64 + c)
            .collect(),
    )?;
    let half = bicubic_resize(&ramp, n / 2, n / 2)?;
    let src = |j: usize| 2.0 * j as f64 + 0.5;
    let err = max_dev(&half, |y, x| a * src(y) + b * src(x) + c, 1..n / 2 - 1, 1..n / 2 - 1);
    out.push(check(
        "bicubic reproduces a linear ramp",
        err <= 1e-5,
        format!("max interior error {err:e}"),
    ));

    let q = Tensor::new(vec![1, 4, 4], (1..=16).map(f64::from).collect())?;
    let pooled = adaptive_max_pool(&q, 2, 2)?;
    out.push(check(
        "max-pool quadrant example",
        pooled.data() == [6.0, 8.0, 14.0, 16.0],
        format!("{:?}", pooled.data()),
    ));

    let cfg = SynthConfig {
        num_patients: 3,
        base_size: 64,
        ..SynthConfig::default()
    };
    let levels: Vec<MagTag> = [1.0, 0.5, 0.25, 0.125]
        .into_iter()
        .map(|m| MagTag::new(m).unwrap())
        .collect();
    let mut exact = true;
    for rec in generate(&cfg, 3)? {
        let pyr = build_pyramid(&rec.image, &levels)?;
        for &m in &levels[1..] {
            let s = level_side(64, m);
            exact &= pyr[&m] == lanczos_resize(&rec.image, s, s)?;
        }
        exact &= pyr[&MagTag::BASE] == rec.image;
    }
    out.push(check(
        "pyramid levels are direct from base",
        exact,
        "bit-exact comparison",
    ));
    Ok(out)
}

pub fn flops_checks() -> Result<Vec<Check>> {
    use resdistill::model::count_flops;
    let mut out = Vec::new();
    for (name, cfg) in [
        ("default model", ModelConfig::default()),
        ("tiny model", tiny_model_config()),
    ] {
        let full = count_flops(&cfg, 256, 256)? as f64;
        let half = count_flops(&cfg, 128, 128)? as f64 / full;
        let eighth = full / count_flops(&cfg, 32, 32)? as f64;
        out.push(check(
            format!("{name}: halving ratio"),
            (0.24..=0.26).contains(&half),
            format!("{half:.4}"),
        ));
        out.push(check(
            format!("{name}: 1/8 reduction factor"),
            (60.0..=68.0).contains(&eighth),
            format!("{eighth:.2}"),
        ));
    }
    Ok(out)
}

/// Confusion-matrix reference for one-vs-rest metrics: `(per-class
/// (precision, recall, f1), macro (p, r, f1), accuracy)`, in percent.
pub fn confusion_oracle(preds: &[usize], labels: &[usize], k: usize) -> (Vec<[f64; 3]>, [f64; 3], f64) {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let per: Vec<[f64; 3]> = (0..k)
        .map(|c| {
            let predicted: usize = (0..k).map(|l| m[l][c]).sum();
            let actual: usize = m[c].iter().sum();
            let (p, r) = (pct(m[c][c], predicted), pct(m[c][c], actual));
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            [p, r, f]
        })
        .collect();
    let mean = |i: usize| per.iter().map(|v| v[i]).sum::<f64>() / k as f64;
    let correct: usize = (0..k).map(|c| m[c][c]).sum();
    (per.clone(), [mean(0), mean(1), mean(2)], pct(correct, preds.len()))
}

/// Exact percentile endpoints of a metric under resampling with replacement,
/// by enumerating all `n^n` equally likely index tuples.
pub fn enumerated_interval(
    preds: &[usize],
    labels: &[usize],
    metric: &dyn Fn(&[usize], &[usize]) -> f64,
    alpha: f64,
) -> (f64, f64) {
    let n = preds.len();
    let total = n.pow(n as u32);
    let mut values = Vec::with_capacity(total);
    let (mut p, mut l) = (vec![0; n], vec![0; n]);
    for code in 0..total {
        let mut c = code;
        for j in 0..n {
            let i = c % n;
            c /= n;
            p[j] = preds[i];
            l[j] = labels[i];
        }
        values.push(metric(&p, &l));
    }
    values.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        // Smallest value whose cumulative probability reaches q.
        let need = (q * total as f64).ceil() as usize;
        values[need.max(1) - 1]
    };
    (quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0))
}

pub fn metrics_checks() -> Result<Vec<Check>> {
    use resdistill::eval::{bootstrap_ci, evaluate_metrics};
    let mut out = Vec::new();

    let mut mismatches = 0;
    let mut r = seed::rng(0, "metrics-oracle");
    for _ in 0..1000 {
        let k = r.random_range(2..=5);
        let n = r.random_range(1..=50);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let m = evaluate_metrics(&preds, &labels, k)?;
        let (per, mac, acc) = confusion_oracle(&preds, &labels, k);
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        let ok = same(m.accuracy, acc)
            && same(m.macro_precision, mac[0])
            && same(m.macro_recall, mac[1])
            && same(m.macro_f1, mac[2])
            && m.per_class
                .iter()
                .zip(&per)
                .all(|(c, o)| same(c.precision, o[0]) && same(c.recall, o[1]) && same(c.f1, o[2]));
        mismatches += usize::from(!ok);
    }
    out.push(check(
        "metrics equal confusion-matrix oracle on 1000 cases",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    ));

    let acc =
        |p: &[usize], l: &[usize]| 100.0 * p.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
    let f1 = |p: &[usize], l: &[usize]| confusion_oracle(p, l, 2).1[2];
    let cases: [(&str, Vec<usize>, Vec<usize>, &dyn Fn(&[usize], &[usize]) -> f64); 4] = [
        ("accuracy, 2 of 4 correct", vec![0, 1, 1, 0], vec![0, 1, 0, 1], &acc),
        ("accuracy, 3 of 4 correct", vec![0, 1, 1, 0], vec![0, 1, 1, 1], &acc),
        ("accuracy, 1 of 4 correct", vec![0, 0, 1, 0], vec![0, 1, 0, 1], &acc),
        ("macro F1, 3 of 4 correct", vec![0, 1, 1, 0], vec![0, 1, 1, 1], &f1),
    ];
    for (name, p, l, metric) in cases {
        let exact = enumerated_interval(&p, &l, metric, 0.05);
        let boot = bootstrap_ci(&p, &l, |a, b| Ok(metric(a, b)), 10_000, 0.05, 11)?;
        out.push(check(
            format!("bootstrap n=4 matches enumeration ({name})"),
            boot == exact,
            format!("bootstrap {boot:?}, exact {exact:?}"),
        ));
    }

    let perfect: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let ci = bootstrap_ci(&perfect, &perfect, |a, b| Ok(acc(a, b)), 10_000, 0.05, 3)?;
    out.push(check(
        "perfect predictions give CI (100, 100)",
        ci == (100.0, 100.0),
        format!("{ci:?}"),
    ));
    Ok(out)
}

pub mod fixture {
    use std::path::Path;

    use resdistill::data::{AugmentConfig, Dataset, DatasetSpec, MagTag, SplitConfig, SynthConfig};
    use resdistill::distill::{DistillConfig, TrainConfig};
    use resdistill::model::ModelConfig;
    use resdistill::tensor::AdamConfig;

    pub fn low() -> MagTag {
        MagTag::new(0.25).unwrap()
    }

    pub fn spec() -> DatasetSpec {
        DatasetSpec {
            synth: SynthConfig {
                num_patients: 40,
                base_size: 32,
                blob_period: 8.0,
                ..SynthConfig::default()
            },
            split: SplitConfig::default(),
            magnifications: vec![MagTag::BASE, MagTag::new(0.5).unwrap(), low()],
            seed: 5,
        }
    }

    pub fn dataset(root: &Path) -> Dataset {
        Dataset::create(root, &spec()).unwrap()
    }

    pub fn model() -> ModelConfig {
        ModelConfig {
            stage_widths: vec![8, 16],
            blocks_per_stage: 1,
            num_classes: 3,
            num_groups: 4,
            input_channels: 3,
        }
    }

    pub fn train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            accumulation_size: 4,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn distill(epochs: usize) -> DistillConfig {
        DistillConfig {
            epochs,
            accumulation_size: 4,
            student_mag: low(),
            ..DistillConfig::default()
        }
    }

    pub fn augment() -> AugmentConfig {
        AugmentConfig::default()
    }
}

/// Parameters other than the linear head, as raw bytes per tensor.
pub fn body_bytes(model: &Model<f32>) -> Vec<(String, Vec<u8>)> {
    let head = model.head_ids();
    model
        .params()
        .ids()
        .filter(|id| !head.contains(id))
        .map(|id| {
            let p = model.params().get(id);
            let bytes = p.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (p.name.clone(), bytes)
        })
        .collect()
}

/// Fine-tune freezing, label blindness of distillation and teacher
/// immutability, on the small fixture dataset in `root`.
pub fn freezing_checks(root: &std::path::Path) -> Result<Vec<Check>> {
    use resdistill::data::{MagTag, Split};
    use resdistill::distill::{distill_student, fine_tune, train_teacher};
    let mut out = Vec::new();
    let mut ds = fixture::dataset(root);
    let (teacher, _) = train_teacher::<f32>(
        &fixture::model(),
        &ds.labeled(Split::Train, MagTag::BASE)?,
        &ds.labeled(Split::Validation, MagTag::BASE)?,
        &fixture::train(3),
        &fixture::augment(),
    )?;
    let cfg = fixture::distill(3);
    let dev = ds.labeled(Split::Development, cfg.student_mag)?;
    let pool = ds.unlabeled(cfg.pool, cfg.teacher_mag, cfg.student_mag)?;

    let before = teacher.param_bytes();
    let (student, _) = distill_student(&teacher, &pool, &dev, &cfg, &fixture::augment())?;
    out.push(check(
        "teacher bytes unchanged by distillation",
        teacher.param_bytes() == before,
        format!("{} bytes compared", before.len()),
    ));

    // Aux records are stored unlabeled; give every pool record a random
    // label and distil again.
    let pool_ids: std::collections::BTreeSet<&str> = pool.ids.iter().map(String::as_str).collect();
    let idx: Vec<usize> = (0..ds.records.len())
        .filter(|&i| pool_ids.contains(ds.records[i].id.as_str()))
        .collect();
    let mut r = seed::rng(0, "relabel");
    let mut changed = 0;
    for &i in &idx {
        let l = Some(r.random_range(0..3));
        changed += usize::from(ds.records[i].class_label != l);
        ds.records[i].class_label = l;
    }
    let pool2 = ds.unlabeled(cfg.pool, cfg.teacher_mag, cfg.student_mag)?;
    let (student2, _) = distill_student(&teacher, &pool2, &dev, &cfg, &fixture::augment())?;
    out.push(check(
        "student bit-identical under pool relabeling",
        student2.param_bytes() == student.param_bytes() && changed > 0,
        format!("{changed} of {} pool labels changed", idx.len()),
    ));

    let train = ds.labeled(Split::Train, cfg.student_mag)?;
    let val = ds.labeled(Split::Validation, cfg.student_mag)?;
    let body = body_bytes(&student);
    let head_before: Vec<u8> = student
        .head_ids()
        .iter()
        .flat_map(|&id| {
            student
                .params()
                .get(id)
                .value
                .data()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<_>>()
        })
        .collect();
    let (tuned, _) = fine_tune(student, &train, &val, &fixture::train(3), &fixture::augment())?;
    let head_after: Vec<u8> = tuned
        .head_ids()
        .iter()
        .flat_map(|&id| {
            tuned
                .params()
                .get(id)
                .value
                .data()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<_>>()
        })
        .collect();
    out.push(check(
        "fine-tune leaves non-head parameters bit-identical",
        body_bytes(&tuned) == body,
        format!("{} tensors compared", body.len()),
    ));
    out.push(check("fine-tune updates the head", head_after != head_before, ""));
    out.push(check(
        "no parameter left frozen after fine-tune",
        tuned.params().iter().all(|p| !p.frozen),
        "",
    ));
    Ok(out)
}
