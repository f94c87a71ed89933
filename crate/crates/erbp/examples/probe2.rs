use erbp::layers::{CellKind, InitKind};
use erbp::prior::WidthPolicy;
use erbp::seqdata::{make_windows, synth_repeat_walk, Corpus, Encoding, UnitKind};
use erbp::train::{train_lm, ErbpPreset, LmMetric, OptimiserSpec, TrainConfig};
use std::time::Instant;

fn main() {
    let text = synth_repeat_walk(20_000, 0);
    let corpus = Corpus::from_text(UnitKind::Integer, &text, (0.5, 0.25, 0.25)).unwrap();
    let enc = Encoding::IntegerScalar { normalised: true };
    let (train, val, test) = make_windows(&corpus, 5, &enc).unwrap();
    let v = corpus.vocabulary_size();
    let variants: Vec<(String, bool, f64, InitKind)> = vec![
        ("standard".into(), false, 0.0, InitKind::RandomUniform),
        ("erbp_l2_0.3".into(), true, 0.3, InitKind::Erbp),
        ("erbp_l2_0.1".into(), true, 0.1, InitKind::Erbp),
        ("erbp_l2_0.03".into(), true, 0.03, InitKind::Erbp),
        ("erbp_l2r_0.1".into(), true, 0.1, InitKind::RandomUniform),
    ];
    for (label, erbp, lambda, init) in variants {
        let t0 = Instant::now();
        let mut ces = Vec::new();
        for seed in [9000u64, 9001, 9002, 9003] {
            let mut cfg = TrainConfig::new(&label);
            cfg.seed = seed;
            cfg.epochs = 3;
            cfg.hidden = 50;
            cfg.depth = 2;
            cfg.context = Some(5);
            cfg.width_policy = WidthPolicy::Expand;
            cfg.optimiser = OptimiserSpec::adam(0.001);
            cfg.init = init;
            if erbp {
                cfg.erbp = ErbpPreset::L2;
                cfg.lambda = lambda;
            }
            let r = train_lm(&cfg, (&train, &val, &test), v, CellKind::Simple, LmMetric::CrossEntropy).unwrap();
            ces.push((r.metric_value * 1e4).round() / 1e4);
        }
        println!("{label:14}: {ces:?} ({:.0}s)", t0.elapsed().as_secs_f64());
    }
}
