//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::rc::Rc;
use std::time::Instant;

use cooprec::codec::{encode_message, message_size, spatial_select, CompressionConfig, SparseFeatureMessage, HEADER_BYTES};
use cooprec::collab::{fuse_all, fuse_pair, CollabParams, Neighbor};
use cooprec::config::{Regime, ScenarioConfig};
use cooprec::geometry::{warp_feature_map, GridSpec, Pose2D};
use cooprec::harness::report::metrics_csv;
use cooprec::harness::{evaluate, mean_iou, metrics_row, run_regime_with, Datasets, MetricsRow, TrainedModel};
use cooprec::nets::{decode_detections, Detection, ANCHOR_SIZE, NMS_IOU, SCORE_THRESHOLD};
use cooprec::scene::{Aabb, Scene};
use cooprec::tensor::gradcheck::max_relative_error;
use cooprec::tensor::layers::Session;
use cooprec::tensor::{checkpoint, NormMode, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=4))
}

/// Contracts a tensor-valued op against a fixed random probe.
fn probe(t: &mut Tape, y: Var, p: &Tensor) -> cooprec::Result<Var> {
    let pv = t.constant(p.clone());
    let z = t.mul(y, pv)?;
    Ok(t.sum_all(z))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => worst.push((name, e)),
    };
    for _ in 0..50 {
        let (h, w, c) = dims(&mut rng);
        let cout = rng.random_range(1..=4);
        let k = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..=2);
        let x = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let kern = rand_t(&mut rng, &[k, k, c, cout], -1.0, 1.0);
        let pad = k / 2;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let p = rand_t(&mut rng, &[oh, ow, cout], -1.0, 1.0);
        record("conv2d", max_relative_error(&[x, kern], |t, v| {
            let y = t.conv2d(v[0], v[1], stride, pad)?;
            probe(t, y, &p)
        }).unwrap());

        let (h2, w2) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let x = rand_t(&mut rng, &[h2, w2, c], -1.0, 1.0);
        let kern = rand_t(&mut rng, &[2, 2, c, cout], -1.0, 1.0);
        let p = rand_t(&mut rng, &[2 * h2, 2 * w2, cout], -1.0, 1.0);
        record("transposed_conv2d", max_relative_error(&[x, kern], |t, v| {
            let y = t.conv_transpose2x2(v[0], v[1])?;
            probe(t, y, &p)
        }).unwrap());

        let c2 = 2 * rng.random_range(1..=2);
        let x = rand_t(&mut rng, &[h, w, c2], -1.0, 1.0);
        let kern = rand_t(&mut rng, &[3, 3, c2], -1.0, 1.0);
        let p = rand_t(&mut rng, &[h, w, c2 / 2], -1.0, 1.0);
        record("depthwise_conv2d", max_relative_error(&[x, kern], |t, v| {
            let y = t.depthwise_pair(v[0], v[1])?;
            probe(t, y, &p)
        }).unwrap());

        let x = rand_t(&mut rng, &[h, w, c], -2.0, 2.0);
        let g = rand_t(&mut rng, &[c], 0.5, 1.5);
        let b = rand_t(&mut rng, &[c], -0.5, 0.5);
        let p = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let (rm, rv) = (vec![0.0; c], vec![1.0; c]);
        record("norm", max_relative_error(&[x, g, b], |t, v| {
            let (y, _) = t.norm(v[0], v[1], v[2], NormMode::Train, &rm, &rv)?;
            probe(t, y, &p)
        }).unwrap());

        // Away from the ReLU kink at zero.
        let x = Tensor::from_fn(&[h, w, c], |_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        });
        let p = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        record("relu", max_relative_error(&[x], |t, v| {
            let y = t.relu(v[0]);
            probe(t, y, &p)
        }).unwrap());

        let kc = rng.random_range(2..=4);
        let x = rand_t(&mut rng, &[h, w, kc], -2.0, 2.0);
        let p = rand_t(&mut rng, &[h, w, kc], -1.0, 1.0);
        record("channel_softmax", max_relative_error(&[x], |t, v| {
            let y = t.channel_softmax(v[0])?;
            probe(t, y, &p)
        }).unwrap());

        let x = rand_t(&mut rng, &[h, w, 2], -2.0, 2.0);
        let p = rand_t(&mut rng, &[h, w, 1], -1.0, 1.0);
        record("two_way_softmax", max_relative_error(&[x], |t, v| {
            let y = t.two_way_softmax(v[0])?;
            probe(t, y, &p)
        }).unwrap());

        let x = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let p = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let sender = Pose2D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI));
        let receiver = Pose2D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI));
        record("warp_feature_map", max_relative_error(&[x], |t, v| {
            let y = warp_feature_map(t, v[0], &sender, &receiver, 0.4)?;
            probe(t, y, &p)
        }).unwrap());

        let a = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let b2 = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let m = rand_t(&mut rng, &[h, w, 1], 0.0, 1.0);
        let mask = Rc::new((0..h * w).map(|_| rng.random_range(0..2) as f64).collect::<Vec<_>>());
        let p = rand_t(&mut rng, &[h, w, 2 * c], -1.0, 1.0);
        record("elementwise", max_relative_error(&[a, b2, m], |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let q = t.mul(d, v[1])?;
            let q = t.mul_broadcast(q, v[2])?;
            let q = t.cell_mask(q, mask.clone())?;
            let q = t.affine(q, 1.5, 0.25);
            let mn = t.mean(&[q, v[0]])?;
            let cat = t.concat_channels(mn, v[1])?;
            probe(t, cat, &p)
        }).unwrap());

        let x = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let b = rand_t(&mut rng, &[c], -1.0, 1.0);
        let p = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        record("add_bias", max_relative_error(&[x, b], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            probe(t, y, &p)
        }).unwrap());

        let pred = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let target = Rc::new(rand_t(&mut rng, &[h, w, c], 0.0, 1.0).into_data());
        record("rec_loss (mse)", max_relative_error(&[pred], |t, v| t.mse(v[0], target.clone(), (h * w) as f64)).unwrap());

        let logits = rand_t(&mut rng, &[h, w, 2], -2.0, 2.0);
        let labels = Rc::new((0..h * w).map(|_| rng.random_range(0..2u8)).collect::<Vec<_>>());
        record("seg_loss (cross-entropy)", max_relative_error(&[logits], |t, v| t.softmax_xent(v[0], labels.clone())).unwrap());

        let logits = rand_t(&mut rng, &[h, w, 1], -3.0, 3.0);
        let targets = Rc::new((0..h * w).map(|_| rng.random_range(0..2) as f64).collect::<Vec<_>>());
        record("focal loss", max_relative_error(&[logits], |t, v| t.focal(v[0], targets.clone(), 0.25, 2.0, 3.0)).unwrap());

        // Offsets kept away from the smooth-L1 switch at |d| = 1.
        let tgt = rand_t(&mut rng, &[h, w, 4], -1.0, 1.0);
        let pred = Tensor::from_fn(&[h, w, 4], |i| {
            let d = if rng.random_bool(0.5) { rng.random_range(0.05..0.9) } else { rng.random_range(1.1..2.5) };
            tgt.data()[i] + if rng.random_bool(0.5) { d } else { -d }
        });
        let weight = Rc::new((0..h * w).map(|_| rng.random_range(0..2) as f64).collect::<Vec<_>>());
        let tgt = Rc::new(tgt.into_data());
        record("smooth-L1", max_relative_error(&[pred], |t, v| t.smooth_l1(v[0], tgt.clone(), weight.clone(), 2.0)).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let names: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(max < 1e-4 && secs < 120.0, format!("max rel err {max:.2e} (< 1e-4) in {secs:.1}s (< 120s); {}", names.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut round_trips = 0;
    for _ in 0..10_000 {
        let h: u16 = rng.random_range(1..=64);
        let w: u16 = rng.random_range(1..=64);
        let c: u8 = rng.random_range(0..=16);
        let cells = h as usize * w as usize;
        let n = rng.random_range(0..=cells.min(200));
        let mut idx = rand::seq::index::sample(&mut rng, cells, n).into_vec();
        idx.sort_unstable();
        let msg = SparseFeatureMessage {
            agent_id: rng.random(),
            pose: [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-3.2..3.2)],
            grid_h: h,
            grid_w: w,
            c_compressed: c,
            coords: idx.iter().map(|&i| ((i / w as usize) as u16, (i % w as usize) as u16)).collect(),
            values: (0..n * c as usize).map(|_| rng.random_range(-1e6f32..1e6)).collect(),
        };
        let bytes = msg.to_bytes().unwrap();
        let back = SparseFeatureMessage::from_bytes(&bytes).unwrap();
        if back == msg && bytes.len() == message_size(n, c as usize) && back.to_bytes().unwrap() == bytes {
            round_trips += 1;
        }
    }

    let mut count_ok = 0;
    let mut count_total = 0;
    for (h, w) in [(16usize, 16usize), (64, 64), (13, 7)] {
        let f = rand_t(&mut rng, &[h, w, 4], -1.0, 1.0);
        for k in (10..=90).step_by(10) {
            for r in (10..=90).step_by(10) {
                let cfg = CompressionConfig::new(k as f64, r as f64, 4, rng.random()).unwrap();
                let sel = spatial_select(&f, &cfg).unwrap();
                let want = ((h * w * k * r) as f64 / 1e4).round() as usize;
                count_total += 1;
                count_ok += (sel.len() == want) as usize;
            }
        }
    }

    let mut ratio_ok = true;
    let mut ratios = Vec::new();
    for (h, w) in [(16usize, 16usize), (64, 64)] {
        let f = rand_t(&mut rng, &[h, w, 4], -1.0, 1.0);
        let payload = |ratio: f64| {
            let p = 100.0 * ratio.sqrt();
            let cfg = CompressionConfig::new(p, p, 4, 7).unwrap();
            let m = encode_message(&f, &spatial_select(&f, &cfg).unwrap(), &Pose2D::IDENTITY, 0).unwrap();
            assert_eq!(m.to_bytes().unwrap().len(), HEADER_BYTES + m.payload_bytes());
            m.payload_bytes() as f64
        };
        let q = payload(0.8) / payload(1.0);
        let tenth = payload(0.1) / payload(1.0);
        let gran = 1.0 / (h * w) as f64;
        ratio_ok &= (q - 0.8).abs() <= gran && (tenth - 0.1).abs() <= gran;
        ratios.push(format!("{h}x{w}: 0.8 -> {q:.4}, 0.1 -> {tenth:.4}"));
    }
    outcome(
        round_trips == 10_000 && count_ok == count_total && ratio_ok,
        format!("round trips {round_trips}/10000; counts {count_ok}/{count_total}; payload ratios {}", ratios.join("; ")),
    )
}

/// Per-cell loops over the update equations.
fn naive_fuse(store: &ParamStore, p: &CollabParams, fi: &Tensor, fj: &Tensor, m: &Tensor) -> Tensor {
    let (h, w, c) = fi.dims3().unwrap();
    let w1 = store.value(p.w1.w).data();
    let w2 = store.value(p.w2.w).data();
    let k = store.value(p.dconv).data();
    let l = p.l as i64;
    let at = |t: &Tensor, r: usize, col: usize, ch: usize| t.data()[(r * w + col) * c + ch];
    let mut a = vec![0.0; h * w * 2 * c];
    for r in 0..h {
        for col in 0..w {
            for o in 0..2 * c {
                a[(r * w + col) * 2 * c + o] =
                    (0..2 * c).map(|i| if i < c { at(fi, r, col, i) } else { at(fj, r, col, i - c) } * w1[i * 2 * c + o]).sum();
            }
        }
    }
    let mut out = fi.clone();
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut d = 0.0;
                for q in [2 * ch, 2 * ch + 1] {
                    for dy in 0..l {
                        for dx in 0..l {
                            let (rr, cc) = (r as i64 + dy - l / 2, col as i64 + dx - l / 2);
                            if rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 {
                                d += a[(rr as usize * w + cc as usize) * 2 * c + q] * k[(dy * l + dx) as usize * 2 * c + q];
                            }
                        }
                    }
                }
                let v: f64 = (0..c).map(|i| at(fj, r, col, i) * w2[i * c + ch]).sum();
                out.data_mut()[(r * w + col) * c + ch] += d * v * m.data()[r * w + col];
            }
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut noop = true;
    let mut perm = true;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let c = rng.random_range(1..=4);
        let mut store = ParamStore::new();
        let p = CollabParams::register(&mut store, "col", c, 3, &mut rng);
        let fi = rand_t(&mut rng, &[h, w, c], -1.0, 1.0);
        let fjs: Vec<Tensor> = (0..3).map(|_| rand_t(&mut rng, &[h, w, c], -1.0, 1.0)).collect();
        let ms: Vec<Tensor> = (0..3).map(|_| rand_t(&mut rng, &[h, w, 1], 0.0, 1.0)).collect();
        let mut s = Session::new(&store, NormMode::Eval);
        let fiv = s.constant(fi.clone());
        let fv: Vec<Var> = fjs.iter().map(|t| s.constant(t.clone())).collect();
        let mv: Vec<Var> = ms.iter().map(|t| s.constant(t.clone())).collect();

        let out = fuse_pair(&mut s, &p, fiv, fv[0], mv[0]).unwrap();
        worst = worst.max(s.value(out).max_abs_diff(&naive_fuse(&store, &p, &fi, &fjs[0], &ms[0])));

        let zero = s.constant(Tensor::zeros(&[h, w, 1]));
        let z = fuse_pair(&mut s, &p, fiv, fv[1], zero).unwrap();
        noop &= s.value(z) == &fi;

        let nbs: Vec<Neighbor> = (0..3).map(|i| Neighbor { agent_id: i as u16 + 1, feature: fv[i], mask: mv[i] }).collect();
        let reference = fuse_all(&mut s, &p, fiv, &nbs).unwrap();
        let mut shuffled = nbs.clone();
        for order in [[2usize, 0, 1], [1, 2, 0], [2, 1, 0]] {
            for (slot, &i) in shuffled.iter_mut().zip(order.iter()) {
                *slot = nbs[i];
            }
            let o = fuse_all(&mut s, &p, fiv, &shuffled).unwrap();
            perm &= s.value(o) == s.value(reference);
        }
    }
    outcome(
        worst < 1e-12 && noop && perm,
        format!("max |fuse_pair - naive| {worst:.1e} (< 1e-12); M=0 bit-exact no-op: {noop}; permutation-invariant: {perm}"),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ScenarioConfig::default();
    let mut checked = 0;
    let mut violations = 0;
    for seed in 0..1000u64 {
        let scene = Scene::build(&cfg, seed).unwrap();
        for i in 0..scene.n_agents() {
            let sup: HashSet<usize> = scene.supervisory[i].occupied().into_iter().collect();
            checked += 1;
            if !scene.raw[i].occupied().iter().all(|c| sup.contains(c)) {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{checked} agent views over 1000 worlds, {violations} superset violations"))
}

/// Models and evaluation worlds shared by the training criteria.
struct Trained {
    cfg: ScenarioConfig,
    data: Datasets,
    runs: Vec<(Regime, f64, Vec<TrainedModel>, Vec<MetricsRow>)>,
    seconds_5: f64,
}

impl Trained {
    fn rows(&self, regime: Regime, lambda: f64) -> &[MetricsRow] {
        &self.runs.iter().find(|r| r.0 == regime && r.1 == lambda).unwrap().3
    }

    fn models(&self, regime: Regime, lambda: f64) -> &[TrainedModel] {
        &self.runs.iter().find(|r| r.0 == regime && r.1 == lambda).unwrap().2
    }
}

fn train_all() -> Trained {
    let cfg = ScenarioConfig::default();
    let t0 = Instant::now();
    let data = Datasets::build(&cfg).unwrap();
    let mut runs = Vec::new();
    let mut seconds_5 = t0.elapsed().as_secs_f64();
    for (regime, lambda) in [(Regime::None, 1.0), (Regime::Core, 1.0), (Regime::Early, 1.0), (Regime::Core, 0.0)] {
        let c = ScenarioConfig { regime, lambda, ..cfg.clone() };
        let t = Instant::now();
        let mut models = Vec::new();
        let rows = run_regime_with(&c, &data, |m| {
            models.push(m.clone());
            Ok(())
        })
        .unwrap();
        let secs = t.elapsed().as_secs_f64();
        println!("  trained {regime} lambda={lambda}: mean IoU {:.2} over seeds {:?} ({secs:.0}s)", mean_iou(&rows), c.train_seeds);
        if lambda == 1.0 {
            seconds_5 += secs;
        }
        runs.push((regime, lambda, models, rows));
    }
    Trained { cfg, data, runs, seconds_5 }
}

fn criterion_5(t: &Trained) -> Outcome {
    let none = mean_iou(t.rows(Regime::None, 1.0));
    let core = mean_iou(t.rows(Regime::Core, 1.0));
    let early = mean_iou(t.rows(Regime::Early, 1.0));
    let secs = t.seconds_5;
    outcome(
        core - none >= 5.0 && early >= core - 2.0 && secs < 1800.0,
        format!("IoU none {none:.2}, core {core:.2} (gain {:.2} >= 5), early {early:.2} (>= core - 2); runtime {secs:.0}s (< 1800s)", core - none),
    )
}

fn mean_final_task(models: &[TrainedModel]) -> f64 {
    models.iter().map(|m| m.final_losses().task_loss).sum::<f64>() / models.len() as f64
}

fn criterion_6(t: &Trained) -> Outcome {
    let with = mean_iou(t.rows(Regime::Core, 1.0));
    let without = mean_iou(t.rows(Regime::Core, 0.0));
    let task_with = mean_final_task(t.models(Regime::Core, 1.0));
    let task_without = mean_final_task(t.models(Regime::Core, 0.0));
    outcome(
        with >= without && task_with <= task_without,
        format!("IoU lambda=1 {with:.2} vs lambda=0 {without:.2}; final task loss lambda=1 {task_with:.4} vs lambda=0 {task_without:.4}"),
    )
}

fn criterion_7(t: &Trained) -> Outcome {
    let models = t.models(Regime::Core, 1.0);
    let iou_at = |ratio: f64| {
        let mut c = t.cfg.clone();
        c.set_spatial_ratio(ratio);
        let mut rows = Vec::new();
        for m in models {
            for (eval_seed, scenes) in &t.data.eval {
                let tally = evaluate(&m.net, &c, Regime::Core, scenes, *eval_seed).unwrap();
                rows.push(metrics_row(&c, m, *eval_seed, &tally, 0.0));
            }
        }
        mean_iou(&rows)
    };
    let (full, most, tenth) = (iou_at(1.0), iou_at(0.8), iou_at(0.1));
    outcome(
        (most - full).abs() <= 2.0 && tenth < most,
        format!("IoU ratio 1.0 {full:.2}, 0.8 {most:.2} (|diff| {:.2} <= 2), 0.1 {tenth:.2} (< ratio 0.8)", (most - full).abs()),
    )
}

fn criterion_8() -> Outcome {
    let cfg = ScenarioConfig { train_worlds: 12, eval_worlds: 4, epochs: 2, train_seeds: vec![5], eval_seeds: vec![6, 7], ..Default::default() };
    let run = || {
        let data = Datasets::build(&cfg).unwrap();
        let mut ckpts = Vec::new();
        let rows = run_regime_with(&cfg, &data, |m| {
            ckpts.push(checkpoint::to_bytes(&m.net.store));
            Ok(())
        })
        .unwrap();
        (metrics_csv(&rows), ckpts)
    };
    let (csv_a, ck_a) = run();
    let (csv_b, ck_b) = run();
    let same_csv = csv_a.as_bytes() == csv_b.as_bytes();
    let same_ck = ck_a == ck_b;
    outcome(same_csv && same_ck, format!("metrics.csv identical: {same_csv} ({} bytes); checkpoints identical: {same_ck} ({} bytes)", csv_a.len(), ck_a[0].len()))
}

fn oracle_nms(mut cands: Vec<Detection>, thresh: f64) -> Vec<Detection> {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    while !cands.is_empty() {
        let top = cands.remove(0);
        cands.retain(|d| top.bbox.iou(&d.bbox) <= thresh);
        out.push(top);
    }
    out
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut agree = 0;
    let mut kept_total = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let grid = GridSpec::new(h, w, 0.8);
        let mut scores = vec![0.0; h * w];
        let cls = Tensor::from_fn(&[h, w, 1], |i| {
            // Distinct scores so the greedy order is unambiguous.
            let z = rng.random_range(-3.0..3.0) + i as f64 * 1e-9;
            scores[i] = 1.0 / (1.0 + (-z as f64).exp());
            z
        });
        let reg = rand_t(&mut rng, &[h, w, 4], -1.0, 1.0);
        let mut cands = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if scores[i] >= SCORE_THRESHOLD {
                    let g = &reg.data()[i * 4..i * 4 + 4];
                    let cc = grid.cell_center(r, c);
                    let center = [cc[0] + g[0] * 0.8, cc[1] + g[1] * 0.8];
                    cands.push(Detection { bbox: Aabb::from_center(center, [ANCHOR_SIZE * g[2].exp(), ANCHOR_SIZE * g[3].exp()]), score: scores[i] });
                }
            }
        }
        let want = oracle_nms(cands, NMS_IOU);
        let got = decode_detections(&cls, &reg, &grid, SCORE_THRESHOLD, NMS_IOU).unwrap();
        kept_total += got.len();
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| (a.score - b.score).abs() < 1e-12 && a.bbox.iou(&b.bbox) > 1.0 - 1e-9);
        agree += same as usize;
    }
    outcome(agree == 1000, format!("{agree}/1000 box sets match the brute-force oracle ({kept_total} survivors total) at score 0.25 / IoU 0.15"))
}

fn report(n: usize, title: &str, o: &Outcome, failures: &mut Vec<usize>) {
    println!("criterion {n} [{}] {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        failures.push(n);
    }
}

fn main() -> ExitCode {
    let mut failures = Vec::new();
    report(1, "gradient suite", &criterion_1(), &mut failures);
    report(2, "codec exactness", &criterion_2(), &mut failures);
    report(3, "fusion oracle equivalence", &criterion_3(), &mut failures);
    report(4, "supervision superset", &criterion_4(), &mut failures);
    let trained = train_all();
    report(5, "collaboration benefit", &criterion_5(&trained), &mut failures);
    report(6, "reconstruction benefit", &criterion_6(&trained), &mut failures);
    report(7, "compression robustness", &criterion_7(&trained), &mut failures);
    report(8, "determinism", &criterion_8(), &mut failures);
    report(9, "NMS oracle", &criterion_9(), &mut failures);
    if failures.is_empty() {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failures:?}");
        ExitCode::FAILURE
    }
}
