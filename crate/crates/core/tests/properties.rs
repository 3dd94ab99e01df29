use std::collections::BTreeSet;

use proptest::prelude::*;

use placekd::data::{generate_synthetic, mine_triplets, Split, SyntheticWorldConfig, TripletSpec};
use placekd::layers::{init_params, Module, NetVlad};
use placekd::losses::{cross_metric_loss, total_loss, CrossTermMask, LossConfig, Metric, Reduction, TripletVars};
use placekd::retrieval::{map_at_n, recall_at_n, DbMeta, DescriptorDatabase, Entry, TimingStats};
use placekd::tensor::{Tape, Tensor, Var};

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn unit_vec(width: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, width)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(normalize)
}

/// Triplets of six width-`w` unit vectors: student a, p, n then teacher a, p, n.
fn embeddings(w: usize) -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    prop::collection::vec(prop::collection::vec(unit_vec(w), 6), 1..5)
}

fn mask() -> impl Strategy<Value = CrossTermMask> {
    (0u8..16)
        .prop_map(|b| CrossTermMask::new(b & 1 != 0, b & 2 != 0, b & 4 != 0, b & 8 != 0))
        .prop_filter("valid", |m| m.validate().is_ok())
}

fn bind(tape: &mut Tape, batch: &[Vec<Vec<f64>>], teacher_leaves: &mut Vec<Var>) -> Vec<TripletVars> {
    batch
        .iter()
        .map(|e| {
            let s: Vec<Var> = e[..3].iter().map(|x| tape.leaf(Tensor::vector(x.clone()), true)).collect();
            let t: Vec<Var> = e[3..]
                .iter()
                .map(|x| {
                    let leaf = tape.leaf(Tensor::vector(x.clone()), true);
                    teacher_leaves.push(leaf);
                    tape.detach(leaf).unwrap()
                })
                .collect();
            TripletVars {
                s_a: s[0],
                s_p: s[1],
                s_n: vec![s[2]],
                t_a: t[0],
                t_p: t[1],
                t_n: vec![t[2]],
            }
        })
        .collect()
}

fn sqd(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn database(rows: &[Vec<f64>], ids: &[u64]) -> DescriptorDatabase {
    let width = rows[0].len();
    let entries = ids
        .iter()
        .map(|&id| Entry {
            id,
            place_id: id % 3,
            x: id as f64,
            y: -(id as f64),
        })
        .collect();
    let data = rows.iter().flatten().map(|&x| x as f32).collect();
    DescriptorDatabase::new(entries, width, data, DbMeta::default()).unwrap()
}

fn rows_and_query() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|w| (prop::collection::vec(unit_vec(w), 1..30), unit_vec(w)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_non_negative_and_add_up(batch in embeddings(5), mask in mask()) {
        let cfg = LossConfig { mask, ..LossConfig::default() };
        let mut tape = Tape::new();
        let mut teacher = Vec::new();
        let vars = bind(&mut tape, &batch, &mut teacher);
        let l = total_loss(&mut tape, &vars, &cfg).unwrap();
        let b = l.breakdown;
        prop_assert!(b.l_hard >= 0.0 && b.l_soft >= 0.0 && b.l_cm >= 0.0);
        prop_assert!((b.l_total - (b.l_hard + b.l_soft + b.l_cm)).abs() < 1e-12);
        tape.backward(l.total).unwrap();
        for v in teacher {
            prop_assert!(tape.grad(v).map_or(true, |g| g.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn pull_terms_match_the_plain_sum(batch in embeddings(4)) {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &batch, &mut Vec::new());
        let (l, _) = cross_metric_loss(&mut tape, &vars, CrossTermMask::PULL, 0.1, Metric::SquaredEuclidean, Reduction::Sum)
            .unwrap();
        let expect: f64 = batch.iter().map(|e| sqd(&e[0], &e[4]) + sqd(&e[1], &e[3])).sum();
        prop_assert!((tape.value(l).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn mask_text_round_trips(m in mask()) {
        prop_assert_eq!(m.to_string().parse::<CrossTermMask>().unwrap(), m);
    }

    #[test]
    fn netvlad_output_is_unit_norm(
        seed in 0u64..1000,
        tokens in 1usize..9,
        data in prop::collection::vec(-10.0f64..10.0, 8 * 8),
    ) {
        let vlad = NetVlad::new("v", 8, 4, 6).unwrap();
        let store = init_params(&vlad.param_specs(), seed).unwrap();
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let x = t.constant(Tensor::matrix(tokens, 8, data[..tokens * 8].to_vec()).unwrap());
        let y = vlad.forward(&mut t, &p, x).unwrap();
        prop_assert!((t.value(y).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn search_is_a_sorted_prefix_of_the_full_ranking((rows, query) in rows_and_query(), n in 1usize..30) {
        let ids: Vec<u64> = (0..rows.len() as u64).rev().collect();
        let db = database(&rows, &ids);
        let q: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let n = n.min(rows.len());
        let all = db.search(&q, rows.len()).unwrap();
        let top = db.search(&q, n).unwrap();
        prop_assert_eq!(&all[..n], &top[..]);
        for w in all.windows(2) {
            prop_assert!(w[0].distance < w[1].distance || (w[0].distance == w[1].distance && w[0].id < w[1].id));
        }
        prop_assert_eq!(all.iter().map(|h| h.id).collect::<BTreeSet<_>>().len(), rows.len());
    }

    #[test]
    fn database_bytes_round_trip((rows, _) in rows_and_query()) {
        let ids: Vec<u64> = (0..rows.len() as u64).map(|i| i * 3 + 1).collect();
        let db = database(&rows, &ids);
        let bytes = db.to_bytes().unwrap();
        let back = DescriptorDatabase::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, db);
    }

    #[test]
    fn recall_grows_with_n_and_map_at_1_equals_recall_at_1(
        rankings in prop::collection::vec(Just((0u64..10).collect::<Vec<_>>()).prop_shuffle(), 1..8),
        truth in prop::collection::vec(prop::collection::btree_set(0u64..12, 0..4), 8),
    ) {
        let truth = truth[..rankings.len()].to_vec();
        let mut last = 0.0;
        for n in 1..=10 {
            let r = recall_at_n(&rankings, &truth, n).value;
            prop_assert!(r >= last);
            last = r;
            let m = map_at_n(&rankings, &truth, n).value;
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert_eq!(map_at_n(&rankings, &truth, 1).value, recall_at_n(&rankings, &truth, 1).value);
    }

    #[test]
    fn timing_median_lies_within_the_samples(ms in prop::collection::vec(0.0f64..100.0, 1..50)) {
        let lo = ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = TimingStats::from_ms(ms).unwrap();
        prop_assert!(lo <= s.median_ms && s.median_ms <= s.p95_ms && s.p95_ms <= hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn worlds_have_disjoint_splits_and_mining_respects_radii(
        places in 2usize..6,
        views in 4usize..10,
        seed in 0u64..10_000,
        r_pos in 5.0f64..15.0,
        gap in 1.0f64..20.0,
    ) {
        let cfg = SyntheticWorldConfig {
            n_places: places,
            views_per_place: views,
            channels: 2,
            image_size: 8,
            max_shift: 1.0,
            noise: 0.05,
            brightness: 0.05,
            occlusion: 0.2,
            ..SyntheticWorldConfig::default()
        };
        let ds = generate_synthetic(&cfg, seed).unwrap();
        prop_assert_eq!(ds.len(), places * views);
        let mut seen = BTreeSet::new();
        for split in [Split::Train, Split::Val, Split::Database, Split::Query] {
            for id in ds.split_ids(split) {
                prop_assert!(seen.insert(id), "sample {} in two splits", id);
            }
        }
        prop_assert_eq!(seen.len(), ds.len());
        let db_places: BTreeSet<usize> = ds.split_ids(Split::Database).iter().map(|&i| ds.samples()[i].place_id).collect();
        for q in ds.split_ids(Split::Query) {
            prop_assert!(db_places.contains(&ds.samples()[q].place_id));
        }

        let spec = TripletSpec { r_pos, r_neg: r_pos + gap, negatives_per_anchor: 3 };
        let Ok(mining) = mine_triplets(&ds, &spec, seed) else { return Ok(()) };
        let s = ds.samples();
        for t in &mining.triplets {
            prop_assert!(t.positive != t.anchor);
            prop_assert!(s[t.anchor].distance_to(&s[t.positive]) < spec.r_pos);
            prop_assert!(!t.negatives.is_empty());
            for &n in &t.negatives {
                prop_assert!(s[t.anchor].distance_to(&s[n]) > spec.r_neg);
            }
        }
    }
}
