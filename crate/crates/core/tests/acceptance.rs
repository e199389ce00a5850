//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cit_core::autograd::{Tape, Var};
use cit_core::checkpoint::Checkpoint;
use cit_core::data::{from_tensor, procedural_set, synth_pairs, to_tensor, ExposurePair, ExposurePairSpec, ImageRGB};
use cit_core::gradcheck::{check, check_model, GradcheckConfig};
use cit_core::losses::{l_col, l_rec, l_spa, total_loss, LossWeights, SpaVariant};
use cit_core::metrics::{psnr, ssim, SsimMode};
use cit_core::nn::{pixel_shuffle_tensor, pixel_unshuffle_tensor, LayerNorm, Linear, WindowAttention, WindowGrid};
use cit_core::params::{Binding, ParamStore};
use cit_core::train::{TrainConfig, Trainer};
use cit_core::{CitConfig, CitModel, CitModel32, Tensor};

const MODEL_GRAD_TOL: f64 = 1e-3;
const LOSS_GRAD_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(300);
const WINDOW_TRIALS: usize = 200;
const ORACLE_TOL: f64 = 1e-9;
const PSNR_TOL: f64 = 1e-6;
const OVERFIT_STEPS: u64 = 500;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_PSNR: f64 = 30.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const ABLATION_STEPS: u64 = 300;
const ABLATION_SEEDS: u64 = 4;
const ABLATION_MIN_WINS: usize = 3;

const CHILD_FLAG: &str = "--forward-digest";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = GradcheckConfig { tol: MODEL_GRAD_TOL, samples: 4, ..GradcheckConfig::default() };
    let model = match check_model(&CitConfig::toy(), 16, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("model gradcheck errored: {e}")),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    store.insert("output", Tensor::rand_uniform([2, 3, 8, 8], 0.05, 0.95, &mut rng));
    let target = Tensor::rand_uniform([2, 3, 8, 8], 0.05, 0.95, &mut rng);
    let input = Tensor::rand_uniform([2, 3, 8, 8], 0.05, 0.95, &mut rng);
    let loss_cfg = GradcheckConfig { tol: LOSS_GRAD_TOL, samples: 32, ..GradcheckConfig::default() };
    let mut loss_worst: f64 = 0.0;
    let mut loss_pass = true;
    for variant in [SpaVariant::RegionMean, SpaVariant::Neighbor] {
        let weights = LossWeights { spa_variant: variant, ..LossWeights::default() };
        let r = check(
            &store,
            |b| {
                let out = b.param("output")?;
                let y = b.tape().constant(target.clone());
                let x = b.tape().constant(input.clone());
                Ok(total_loss(out, y, x, &weights)?.total)
            },
            &loss_cfg,
        );
        match r {
            Ok(r) => {
                loss_worst = loss_worst.max(r.max_rel_err());
                loss_pass &= r.passed();
            }
            Err(e) => return outcome(false, format!("loss gradcheck errored: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = model.passed() && loss_pass && elapsed < GRADCHECK_BUDGET;
    outcome(
        pass,
        format!(
            "{} param groups max rel-err {:.2e} (< {MODEL_GRAD_TOL:.0e}), losses {:.2e} (< {LOSS_GRAD_TOL:.0e}), {:.1}s",
            model.groups.len(),
            model.max_rel_err(),
            loss_worst,
            elapsed.as_secs_f64()
        ),
    )
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Pre-norm windowed block with no injected branches, built from the
/// layer primitives and the block's own parameters.
fn plain_block<'t>(
    b: &Binding<'t, '_, f64>,
    name: &str,
    cfg: &CitConfig,
    x: Var<'t, f64>,
    (n, h, w): (usize, usize, usize),
    shift: usize,
) -> cit_core::Result<Var<'t, f64>> {
    let c = cfg.channels;
    let hidden = cfg.mlp_hidden();
    let grid = WindowGrid::new(n, h, w, c, cfg.window, shift)?;
    let xn = LayerNorm::new(format!("{name}.norm1"), c).forward(b, x)?;
    let windows = grid.partition(xn.reshape([n, h, w, c])?)?;
    let mask = (shift > 0).then(|| grid.attention_mask::<f64>());
    let attn = WindowAttention::new(format!("{name}.attn"), c, cfg.heads, cfg.window, cfg.use_rel_bias)?;
    let a = grid.reverse(attn.forward(b, windows, mask.as_ref())?)?.reshape([n, h * w, c])?;
    let xk = a.add(x)?;
    let m = Linear::new(format!("{name}.mlp.fc1"), c, hidden)
        .forward(b, LayerNorm::new(format!("{name}.norm2"), c).forward(b, xk)?)?;
    Linear::new(format!("{name}.mlp.fc2"), hidden, c).forward(b, m.gelu()?)?.add(xk)
}

fn structural_degeneracy() -> Outcome {
    let (n, h, w) = (2, 8, 8);
    let base = CitConfig { channels: 8, heads: 2, window: 4, ..CitConfig::toy() };
    let zeroed = CitModel::<f64>::new(CitConfig { alpha: 0.0, beta: 0.0, ..base.clone() }).unwrap();
    let off = CitModel::<f64>::new(CitConfig { use_cab: false, use_hinb: false, ..base.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tokens = Tensor::<f64>::randn([n, h * w, base.channels], &mut rng);
    let mut compared = 0;
    for block in 0..base.citb_count {
        let run = |m: &CitModel<f64>| {
            let tape = Tape::new();
            let b = Binding::new(&tape, &m.params);
            let y = m.citb_forward(&b, 0, block, tape.constant(tokens.clone()), h, w).unwrap();
            bits(&y.value())
        };
        let reference = {
            let tape = Tape::new();
            let b = Binding::new(&tape, &off.params);
            let name = format!("rcitg0.citb{block}");
            let shift = base.shift_for_block(block);
            let y = plain_block(&b, &name, &base, tape.constant(tokens.clone()), (n, h, w), shift).unwrap();
            bits(&y.value())
        };
        let (a, z) = (run(&zeroed), run(&off));
        if a != reference || z != reference {
            return outcome(
                false,
                format!("block {block}: zero-weight or disabled branches differ from the plain path"),
            );
        }
        compared += reference.len();
    }
    outcome(true, format!("{compared} values bit-equal across {} blocks (shift 0 and W/2)", base.citb_count))
}

fn window_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..WINDOW_TRIALS {
        let window = rng.random_range(1..=6usize);
        let shift = if trial % 2 == 0 { 0 } else { window / 2 };
        let n = rng.random_range(1..=2usize);
        let h = window * rng.random_range(1..=4usize);
        let w = window * rng.random_range(1..=4usize);
        let c = rng.random_range(1..=5usize);
        let grid = WindowGrid::new(n, h, w, c, window, shift).unwrap();
        let x = Tensor::<f64>::randn([n, h, w, c], &mut rng);
        let back = grid.reverse_tensor(&grid.partition_tensor(&x).unwrap()).unwrap();
        if bits(&back) != bits(&x) {
            return outcome(
                false,
                format!("window round-trip failed for n={n} h={h} w={w} c={c} W={window} s={shift}"),
            );
        }
        let r = rng.random_range(1..=4usize);
        let t = Tensor::<f64>::from_fn([n, c * r * r, h, w], |i| i as f64);
        let y = pixel_shuffle_tensor(&t, r).unwrap();
        let mut seen = y.data().to_vec();
        seen.sort_by(f64::total_cmp);
        let is_perm = seen.iter().enumerate().all(|(i, &v)| v == i as f64);
        if !is_perm || bits(&pixel_unshuffle_tensor(&y, r).unwrap()) != bits(&t) {
            return outcome(false, format!("pixel shuffle not a bijection for c={c} r={r} h={h} w={w}"));
        }
    }
    outcome(true, format!("{WINDOW_TRIALS} random shapes: partition/reverse and pixel shuffle exact"))
}

fn loss_oracles() -> Outcome {
    let tape = Tape::<f64>::new();
    let nchw = |h: usize, w: usize, f: &dyn Fn(usize, usize, usize) -> f64| {
        Tensor::from_fn([1, 3, h, w], |i| f(i / (h * w), (i / w) % h, i % w))
    };
    let means = [0.5, 0.3, 0.1];
    let col = l_col(tape.constant(nchw(4, 4, &|c, _, _| means[c]))).unwrap().value().item().unwrap();
    let base = nchw(8, 8, &|c, y, x| ((c + 2 * y + 3 * x) % 7) as f64 / 10.0);
    let shifted = base.map(|v| v + 0.1);
    let spa = l_spa(tape.constant(shifted), tape.constant(base.clone()), SpaVariant::RegionMean)
        .unwrap()
        .value()
        .item()
        .unwrap();
    let zero = ImageRGB::from_fn(16, 16, |_, _, _| 0.0);
    let half = ImageRGB::from_fn(16, 16, |_, _, _| 0.5);
    let p = psnr(&zero, &half).unwrap();
    let textured = ImageRGB::from_fn(24, 24, |y, x, c| ((y * 7 + x * 3 + c * 5) % 13) as f32 / 12.0);
    let s = ssim(&textured, &textured, SsimMode::RgbMean).unwrap();
    let rec = l_rec(tape.constant(base.clone()), tape.constant(base)).unwrap().value().item().unwrap();
    let expect_psnr = 10.0 * 4f64.log10();
    let pass = (col - 0.24).abs() <= ORACLE_TOL
        && (spa - 0.01).abs() <= ORACLE_TOL
        && (p - expect_psnr).abs() <= PSNR_TOL
        && (s - 1.0).abs() <= ORACLE_TOL
        && rec == 0.0;
    outcome(pass, format!("l_col {col:.12}, l_spa {spa:.12}, psnr {p:.7} dB, ssim(x,x) {s:.12}"))
}

fn overfit_pairs() -> Vec<ExposurePair> {
    // Underexposure only: clipped highlights would make the mapping non-invertible.
    let spec = ExposurePairSpec { ev_offsets: vec![-1.0], ..ExposurePairSpec::default() };
    synth_pairs(&procedural_set(4, 64, 64, 1), &spec).unwrap()
}

fn train_psnr(model: &CitModel32, pairs: &[ExposurePair]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let y = model.infer(&to_tensor(&[&p.input]).unwrap()).unwrap();
            psnr(&from_tensor(&y).unwrap()[0], &p.target).unwrap()
        })
        .sum();
    total / pairs.len() as f64
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let pairs = overfit_pairs();
    let cfg = TrainConfig { steps: OVERFIT_STEPS, batch: 4, crop: 64, lr: OVERFIT_LR, ..TrainConfig::default() };
    let mut trainer = Trainer::new(CitModel32::new(CitConfig::toy()).unwrap(), pairs.clone(), cfg).unwrap();
    let log = match trainer.run(None, |_| {}) {
        Ok(l) => l,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let value = train_psnr(&trainer.model, &pairs);
    let elapsed = start.elapsed();
    let last = log.last().map(|r| r.loss.rec).unwrap_or(f64::NAN);
    outcome(
        value >= OVERFIT_PSNR && elapsed < OVERFIT_BUDGET,
        format!("train PSNR {value:.2} dB after {OVERFIT_STEPS} steps (need >= {OVERFIT_PSNR}), final L_rec {last:.4}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn forward_digest() -> String {
    let model = CitModel32::new(CitConfig::toy()).unwrap();
    let x = to_tensor::<f32>(&[&overfit_pairs()[0].input]).unwrap();
    let y = model.infer(&x).unwrap();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in y.data() {
        for byte in v.to_le_bytes() {
            h = (h ^ byte as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn child_digest() -> Result<String, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let out = Command::new(exe).arg(CHILD_FLAG).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("child exited with {}", out.status));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn one_step_after(trainer: &mut Trainer<f32>) -> (f64, Vec<u32>) {
    let rec = trainer.train_step().unwrap();
    let params = trainer.model.params.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect();
    (rec.loss.total, params)
}

fn shape_contract() -> Outcome {
    let model = CitModel32::new(CitConfig::toy()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for size in [64, 100, 256] {
        let x = Tensor::<f32>::rand_uniform([1, 3, size, size], 0.0, 1.0, &mut rng);
        let y = model.infer(&x).unwrap();
        if y.shape() != [1, 3, size, size] {
            return outcome(false, format!("{size}x{size} input gave {:?}", y.shape()));
        }
    }

    let (a, b) = match (child_digest(), child_digest()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("could not run child process: {e}")),
    };
    if a != b || a != forward_digest() {
        return outcome(false, format!("forward digests differ across processes: {a} vs {b}"));
    }

    let pairs = overfit_pairs();
    let cfg = TrainConfig { steps: 3, batch: 2, crop: 32, lr: 1e-3, ..TrainConfig::default() };
    let mut straight = Trainer::new(CitModel32::new(CitConfig::toy()).unwrap(), pairs.clone(), cfg.clone()).unwrap();
    straight.run(None, |_| {}).unwrap();
    let bytes = straight.checkpoint(&cfg).to_bytes();
    let restored = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    if restored.to_bytes() != bytes {
        return outcome(false, "checkpoint bytes differ after a load/save cycle");
    }
    let mut resumed = Trainer::resume(restored, pairs, cfg).unwrap();
    let (la, pa) = one_step_after(&mut straight);
    let (lb, pb) = one_step_after(&mut resumed);
    if la.to_bits() != lb.to_bits() || pa != pb {
        return outcome(false, format!("resumed step diverges: loss {la} vs {lb}"));
    }
    outcome(true, format!("shapes 64/100/256 preserved; digest {a} in two processes; resume bit-exact (loss {la:.6})"))
}

fn final_loss(config: CitConfig, seed: u64) -> f64 {
    let spec = ExposurePairSpec { ev_offsets: vec![-1.0], seed, ..ExposurePairSpec::default() };
    let pairs = synth_pairs(&procedural_set(4, 64, 64, 1), &spec).unwrap();
    let cfg = TrainConfig {
        steps: ABLATION_STEPS,
        batch: 4,
        crop: 64,
        lr: OVERFIT_LR,
        sample_seed: seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(CitModel32::new(config).unwrap(), pairs, cfg).unwrap();
    trainer.run(None, |_| {}).unwrap().last().unwrap().loss.total
}

fn ablation() -> Outcome {
    let rows: Vec<(u64, f64, [f64; 3])> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..ABLATION_SEEDS)
            .map(|seed| {
                s.spawn(move || {
                    let full = CitConfig { seed, ..CitConfig::toy() };
                    let variants = [
                        CitConfig { use_scam: false, ..full.clone() },
                        CitConfig { use_cab: false, ..full.clone() },
                        CitConfig { use_hinb: false, ..full.clone() },
                    ];
                    (seed, final_loss(full, seed), variants.map(|v| final_loss(v, seed)))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wins = rows.iter().filter(|(_, full, abl)| abl.iter().all(|a| full <= a)).count();
    let table: Vec<String> = rows
        .iter()
        .map(|(s, f, a)| format!("seed{s} full {f:.4} / -scam {:.4} -cab {:.4} -hinb {:.4}", a[0], a[1], a[2]))
        .collect();
    outcome(
        wins >= ABLATION_MIN_WINS,
        format!("full model best in {wins}/{ABLATION_SEEDS} seeds (need {ABLATION_MIN_WINS}); {}", table.join("; ")),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == CHILD_FLAG) {
        println!("{}", forward_digest());
        return ExitCode::SUCCESS;
    }
    // libtest passes flags such as --list; answer listing with nothing.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("gradient oracle", gradient_oracle),
        ("structural degeneracy", structural_degeneracy),
        ("window machinery", window_machinery),
        ("loss and metric oracles", loss_oracles),
        ("overfit", overfit),
        ("shape and determinism contract", shape_contract),
        ("ablation ordering", ablation),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!("criterion {} {}: {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
