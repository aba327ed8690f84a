use std::sync::OnceLock;

use desom_core::desom::{preset, stamps_tensor, train_separate, DesomModel};
use desom_core::eval::{
    classify_stamp, confusion_rates, evaluate_selection, majority_selection, order_cells_by_percentile,
    ratio_map, roc_switch_off, train_reference_scorer, LabeledCells, PvSelection, Ratio, ReferenceScorer,
    ScorerConfig,
};
use desom_core::som::{Cell, DecaySchedule};
use desom_core::stamps::{Label, Stamp};
use desom_core::synth::{synth_stamp_set, StampSetConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    model: DesomModel,
    train: Vec<Stamp>,
    test: Vec<Stamp>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let stamps = synth_stamp_set(&StampSetConfig::default(), 600, 1400, 11).unwrap();
        let (train, test) = stamps.split_at(1500);
        let mut cfg = preset("desk-8x8").unwrap().with_seed(11);
        cfg.ae.epochs = 3;
        cfg.schedule = DecaySchedule {
            n_iters: 5000,
            ..DecaySchedule::default()
        };
        let fit = train_separate(&stamps_tensor(train).unwrap(), &cfg).unwrap();
        Fixture {
            model: fit.model,
            train: train.to_vec(),
            test: test.to_vec(),
        }
    })
}

fn random_selection(m: usize, rng: &mut ChaCha8Rng) -> PvSelection {
    let p: f64 = rng.random();
    PvSelection::new(m, (0..m * m).filter(|_| rng.random_bool(p)).map(|i| Cell::from_index(i, m))).unwrap()
}

#[test]
fn classification_follows_the_selection() {
    let f = fixture();
    let m = f.model.m();
    for s in f.test.iter().take(50) {
        assert_eq!(classify_stamp(&f.model, &PvSelection::all(m), s.pixels()).unwrap(), Label::Real);
        assert_eq!(classify_stamp(&f.model, &PvSelection::empty(m), s.pixels()).unwrap(), Label::Bogus);
        let own = PvSelection::new(m, [f.model.assign_cell(s.pixels()).unwrap()]).unwrap();
        assert_eq!(classify_stamp(&f.model, &own, s.pixels()).unwrap(), Label::Real);
    }
    assert!(classify_stamp(&f.model, &PvSelection::all(m + 1), f.test[0].pixels()).is_err());
}

#[test]
fn rates_match_per_stamp_recount() {
    let f = fixture();
    let m = f.model.m();
    let cells = LabeledCells::from_stamps(&f.model, &f.test).unwrap();
    let all = confusion_rates(&PvSelection::all(m), &cells).unwrap();
    assert_eq!((all.mdr, all.fpr), (0.0, 1.0));
    let none = confusion_rates(&PvSelection::empty(m), &cells).unwrap();
    assert_eq!((none.mdr, none.fpr), (1.0, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let sel = random_selection(m, &mut rng);
        let (mut real, mut missed, mut bogus, mut fp) = (0, 0, 0, 0);
        for s in &f.test {
            let said = classify_stamp(&f.model, &sel, s.pixels()).unwrap();
            match s.label {
                Label::Real => {
                    real += 1;
                    missed += (said == Label::Bogus) as usize;
                }
                Label::Bogus => {
                    bogus += 1;
                    fp += (said == Label::Real) as usize;
                }
                Label::Unlabeled => {}
            }
        }
        let rates = evaluate_selection(&f.model, &sel, &f.test).unwrap();
        assert_eq!(rates.mdr, missed as f64 / real as f64);
        assert_eq!(rates.fpr, fp as f64 / bogus as f64);
    }
    let only_real: Vec<Stamp> = f.test.iter().filter(|s| s.label == Label::Real).cloned().collect();
    assert!(evaluate_selection(&f.model, &PvSelection::all(m), &only_real).is_err());
}

fn latents_and_labels(model: &DesomModel, stamps: &[Stamp]) -> (Vec<f32>, Vec<Label>) {
    let z = model.encode(&stamps_tensor(stamps).unwrap()).unwrap();
    (z, stamps.iter().map(|s| s.label).collect())
}

#[test]
fn reference_scorer_accuracy() {
    let f = fixture();
    let (z, labels) = latents_and_labels(&f.model, &f.train);
    let cfg = ScorerConfig::default();
    let scorer = train_reference_scorer(&z, f.model.d(), &labels, 3, &cfg).unwrap();
    // Short training leaves the latents only roughly linearly separable.
    assert!(scorer.holdout_accuracy >= 0.85, "{}", scorer.holdout_accuracy);
    assert_eq!(scorer, train_reference_scorer(&z, f.model.d(), &labels, 3, &cfg).unwrap());
    assert!(z.chunks(f.model.d()).all(|r| (0.0..=1.0).contains(&scorer.score(r))));
    assert!(scorer.provenance().contains("logistic"));

    // Balanced labels assigned at random carry no signal.
    let mut shuffled: Vec<Label> = (0..labels.len()).map(|i| if i % 2 == 0 { Label::Real } else { Label::Bogus }).collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let noise = train_reference_scorer(&z, f.model.d(), &shuffled, 3, &ScorerConfig { holdout: 0.5, ..cfg }).unwrap();
    assert!((noise.holdout_accuracy - 0.5).abs() <= 0.05, "{}", noise.holdout_accuracy);
}

#[test]
fn scorer_on_separable_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 16;
    let mut z = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2000 {
        let real = i % 3 == 0;
        for k in 0..d {
            let centre = if real && k < 4 { 1.0 } else { 0.0 };
            z.push(centre + rng.random_range(-0.3f32..0.3));
        }
        labels.push(if real { Label::Real } else { Label::Bogus });
    }
    let scorer = train_reference_scorer(&z, d, &labels, 1, &ScorerConfig::default()).unwrap();
    assert!(scorer.holdout_accuracy >= 0.95, "{}", scorer.holdout_accuracy);
}

/// Percentile of each cell's member scores, computed without shared helpers.
fn cell_percentiles(cells: &[Cell], scores: &[f64], m: usize, q: f64) -> Vec<Option<f64>> {
    (0..m * m)
        .map(|i| {
            let mut v: Vec<f64> = cells
                .iter()
                .zip(scores)
                .filter(|(c, _)| c.row * m + c.col == i)
                .map(|(_, &s)| s)
                .collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            let rank = q / 100.0 * (v.len() - 1) as f64;
            let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
            Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
        })
        .collect()
}

#[test]
fn percentile_orderings_match_oracle() {
    let f = fixture();
    let m = f.model.m();
    let (z, labels) = latents_and_labels(&f.model, &f.train);
    let scorer = train_reference_scorer(&z, f.model.d(), &labels, 3, &ScorerConfig::default()).unwrap();
    let scores: Vec<f64> = z.chunks(f.model.d()).map(|r| scorer.score(r)).collect();
    let cells = f.model.som.assign(&z).unwrap();
    let mut orders = Vec::new();
    for q in [99.0, 50.0] {
        let order = order_cells_by_percentile(&cells, &scores, m, q).unwrap();
        let keys = cell_percentiles(&cells, &scores, m, q);
        let key = |c: &Cell| keys[c.row * m + c.col];
        let mut seen = vec![false; m * m];
        for c in &order {
            seen[c.row * m + c.col] = true;
        }
        assert!(seen.iter().all(|&s| s));
        for w in order.windows(2) {
            let ok = match (key(&w[0]), key(&w[1])) {
                (None, None) => w[0] < w[1],
                (None, Some(_)) => true,
                (Some(_), None) => false,
                (Some(a), Some(b)) => a < b || (a == b && w[0] < w[1]),
            };
            assert!(ok, "q {q}: {:?} before {:?}", w[0], w[1]);
        }
        orders.push(order);
    }
    assert_ne!(orders[0], orders[1]);
}

fn check_curve(order: &[Cell], cells: &LabeledCells) {
    let m = cells.m;
    let roc = roc_switch_off(order, cells, None).unwrap();
    assert_eq!(roc.points.len(), m * m + 1);
    let (first, last) = (roc.points[0], roc.points[m * m]);
    assert_eq!((first.fpr, first.mdr), (1.0, 0.0));
    assert_eq!((last.fpr, last.mdr), (0.0, 1.0));
    for w in roc.points.windows(2) {
        assert!(w[1].fpr <= w[0].fpr && w[1].mdr >= w[0].mdr);
        assert_eq!(w[1].n_off, w[0].n_off + 1);
    }
}

#[test]
fn switch_off_curves_on_trained_model() {
    let f = fixture();
    let m = f.model.m();
    let cells = LabeledCells::from_stamps(&f.model, &f.test).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let mut order: Vec<Cell> = (0..m * m).map(|i| Cell::from_index(i, m)).collect();
        order.shuffle(&mut rng);
        check_curve(&order, &cells);
    }
}

fn labeled_cells(m: usize, real: Vec<usize>, bogus: Vec<usize>) -> LabeledCells {
    LabeledCells {
        m,
        real: real.into_iter().map(|i| Cell::from_index(i % (m * m), m)).collect(),
        bogus: bogus.into_iter().map(|i| Cell::from_index(i % (m * m), m)).collect(),
    }
}

proptest! {
    #[test]
    fn switch_off_curve_properties(
        m in 1usize..6,
        real in prop::collection::vec(0usize..36, 1..40),
        bogus in prop::collection::vec(0usize..36, 1..40),
        seed in 0u64..1000,
    ) {
        let cells = labeled_cells(m, real, bogus);
        let mut order: Vec<Cell> = (0..m * m).map(|i| Cell::from_index(i, m)).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        check_curve(&order, &cells);
    }

    #[test]
    fn ratio_probabilities_sum_to_one(
        m in 1usize..6,
        real in prop::collection::vec(0usize..36, 1..60),
        bogus in prop::collection::vec(0usize..36, 1..60),
    ) {
        let map = ratio_map(&labeled_cells(m, real, bogus)).unwrap();
        prop_assert!((map.p_real.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((map.p_bogus.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ratio_map_conventions() {
    let same = labeled_cells(3, vec![0, 0, 4, 8], vec![0, 0, 4, 8]);
    let map = ratio_map(&same).unwrap();
    for i in [0, 4, 8] {
        assert_eq!(map.ratio(Cell::from_index(i, 3)), Ratio::Value(1.0));
    }
    assert_eq!(map.ratio(Cell::from_index(1, 3)), Ratio::Empty);
    let only_real = ratio_map(&labeled_cells(2, vec![0, 3], vec![3])).unwrap();
    assert_eq!(only_real.ratio(Cell::new(0, 0)), Ratio::NoBogus);
    assert_eq!(only_real.grid()[0][0], None);
}

#[test]
fn majority_cells_have_higher_ratios() {
    let f = fixture();
    let cells = LabeledCells::from_stamps(&f.model, &f.train).unwrap();
    let sel = majority_selection(&cells);
    assert!(!sel.is_empty());
    let map = ratio_map(&cells).unwrap();
    // Unbounded cells count as the largest finite ratio seen.
    let finite_max = f
        .model
        .som
        .cells()
        .filter_map(|c| match map.ratio(c) {
            Ratio::Value(v) => Some(v),
            _ => None,
        })
        .fold(0.0, f64::max);
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for c in f.model.som.cells() {
        let v = match map.ratio(c) {
            Ratio::Value(v) => v,
            Ratio::NoBogus => finite_max,
            Ratio::Empty => continue,
        };
        if sel.contains(c) {
            inside.push(v);
        } else {
            outside.push(v);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!outside.is_empty());
    assert!(mean(&inside) > mean(&outside), "{} vs {}", mean(&inside), mean(&outside));
}
