use erbp::layers::{CellKind, InitKind};
use erbp::prior::WidthPolicy;
use erbp::seqdata::{make_windows, synth_periodic_text, Corpus, Encoding, UnitKind};
use erbp::train::{train_lm, ErbpPreset, LmMetric, OptimiserSpec, TrainConfig};
use std::time::Instant;

fn main() {
    let text = synth_periodic_text(200_000, 7);
    let corpus = Corpus::from_text(UnitKind::Char, &text, (0.5, 0.25, 0.25)).unwrap();
    let enc = Encoding::IntegerScalar { normalised: true };
    let (train, val, test) = make_windows(&corpus, 10, &enc).unwrap();
    let v = corpus.vocabulary_size();
    let req = 10 * 9 * 1;
    for (label, erbp, policy, first) in [
        ("standard_base", false, WidthPolicy::Expand, None),
        ("erbp_tr", true, WidthPolicy::Truncate, None),
        ("standard_wide", false, WidthPolicy::Expand, Some(req)),
        ("erbp_ex", true, WidthPolicy::Expand, None),
    ] {
        let t0 = Instant::now();
        let mut ppls = Vec::new();
        for seed in [7000u64, 7001, 7002] {
            let mut cfg = TrainConfig::new(label);
            cfg.seed = seed;
            cfg.epochs = 2;
            cfg.hidden = 50;
            cfg.first_hidden = first;
            cfg.depth = 2;
            cfg.context = Some(10);
            cfg.width_policy = policy;
            cfg.optimiser = OptimiserSpec::adam(0.001);
            if erbp {
                cfg.erbp = ErbpPreset::L2;
                cfg.lambda = 0.3;
                cfg.init = InitKind::Erbp;
            }
            let r = train_lm(&cfg, (&train, &val, &test), v, CellKind::Simple, LmMetric::Perplexity).unwrap();
            ppls.push((r.metric_value * 1e3).round() / 1e3);
        }
        println!("{label:14}: {ppls:?} ({:.0}s)", t0.elapsed().as_secs_f64());
    }
}
