use crn::baselines::{build_model, ModelKind};
use crn::model::{CrnConfig, Model};
use crn::nn::{grad_check, Graph, ParamStore, Tensor};
use crn::scm::{stream_rng, Episode, EpisodeSpec, InterventionSample};
use rand::seq::SliceRandom;
use rand::Rng;

fn tiny_config(n: usize, k: usize) -> CrnConfig {
    CrnConfig {
        n,
        k,
        enc_hidden: (6, 5),
        edge_feat_dim: 3,
        belief_dim: 4,
        dec_hidden: 5,
        attn_hidden: 4,
        pred_hidden: 3,
        proj_hidden: 6,
        bit_embed_dim: 2,
        ..CrnConfig::default()
    }
}

fn episodes(n: usize, k: usize, count: u64, seed: u64) -> Vec<Episode> {
    let spec = EpisodeSpec {
        n,
        k,
        ..EpisodeSpec::default()
    };
    (0..count).map(|e| spec.generate_indexed(seed, 0, e).unwrap()).collect()
}

fn model(kind: ModelKind, cfg: &CrnConfig, seed: u64) -> Model<f64> {
    build_model(kind, cfg, &mut stream_rng(seed, 2, 0)).unwrap()
}

fn grad_norms(store: &ParamStore<f64>, prefix: &str) -> f64 {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .flat_map(|(_, p)| p.grad.data().iter().map(|g| g * g))
        .sum::<f64>()
        .sqrt()
}

const ENCODER_PREFIXES: [&str; 4] = ["encoder/", "attention/", "prediction/", "projection/"];

/// Gradients of the decoder loss alone, accumulated into the model store.
fn decoder_loss_grads(m: &mut Model<f64>, eps: &[Episode]) {
    let refs: Vec<&Episode> = eps.iter().collect();
    let mut g = Graph::new();
    let loss = m.batch_loss(&mut g, &refs).unwrap();
    m.store.zero_grads();
    g.backward(loss.dec).unwrap().accumulate_into(&mut m.store);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = tiny_config(3, 4);
    let eps = episodes(3, 4, 2, 11);
    for kind in ModelKind::ALL {
        let mut base = model(kind, &cfg, 3);
        // zero biases put ReLU inputs exactly on the kink for zero samples
        let mut rng = stream_rng(3, 9, 0);
        for p in base.store.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let mut store = base.store.clone();
        let report = grad_check(
            &mut store,
            |g, s| {
                let mut m = base.clone();
                m.store = s.clone();
                let refs: Vec<&Episode> = eps.iter().collect();
                let loss = m.batch_loss(g, &refs)?;
                // a stop-gradient is not a derivative; check the pure part
                Ok(if kind == ModelKind::Crn {
                    loss.recon.unwrap()
                } else {
                    loss.total
                })
            },
            1e-4,
        )
        .unwrap_or_else(|e| panic!("{kind}: {e}"));
        assert!(report.max_rel_err < 1e-4, "{kind}: {}", report.max_rel_err);
    }
}

#[test]
fn attention_rows_are_normalized() {
    let cfg = CrnConfig::default();
    let m = model(ModelKind::Crn, &cfg, 1);
    for ep in episodes(5, 100, 3, 2) {
        for s in ep.samples.iter().take(10) {
            let out = m.encode_step(s).unwrap().unwrap();
            for i in 0..5 {
                let row = &out.attn[i * 5..(i + 1) * 5];
                assert_eq!(row[i], 0.0);
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-6, "row {i} sums to {total}");
            }
        }
    }
}

fn final_belief(m: &Model<f64>, ep: &Episode) -> Vec<f64> {
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &[ep]).unwrap();
    g.value(enc.belief.unwrap()).row(ep.len() - 1).to_vec()
}

#[test]
fn belief_is_invariant_to_sample_order() {
    let cfg = CrnConfig::default();
    let m = model(ModelKind::Crn, &cfg, 4);
    let mut rng = stream_rng(4, 9, 0);
    for ep in episodes(5, 100, 3, 5) {
        let reference = final_belief(&m, &ep);
        for _ in 0..3 {
            let mut shuffled = ep.clone();
            shuffled.samples.shuffle(&mut rng);
            let h = final_belief(&m, &shuffled);
            for (a, b) in reference.iter().zip(&h) {
                let scale = a.abs().max(b.abs()).max(1e-12);
                assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn stop_gradient_isolates_encoder_from_decoder_loss() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 3, 6);
    let mut m = model(ModelKind::Crn, &cfg, 7);
    decoder_loss_grads(&mut m, &eps);
    for (_, p) in m.store.iter() {
        if ENCODER_PREFIXES.iter().any(|pre| p.name.starts_with(pre)) {
            assert!(p.grad.data().iter().all(|&g| g == 0.0), "{} received decoder gradient", p.name);
        }
    }
    assert!(grad_norms(&m.store, "decoder/") > 0.0);
}

#[test]
fn supervised_variant_propagates_decoder_loss_into_encoder() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 3, 6);
    let mut m = model(ModelKind::CrnSupervised, &cfg, 7);
    decoder_loss_grads(&mut m, &eps);
    // the prediction head only feeds the reconstruction loss
    for pre in ["encoder/", "attention/", "projection/"] {
        assert!(grad_norms(&m.store, pre) > 0.0, "no gradient reached {pre}");
    }
}

#[test]
fn lstm_baseline_trains_end_to_end() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 3, 6);
    let mut m = model(ModelKind::Lstm, &cfg, 7);
    decoder_loss_grads(&mut m, &eps);
    assert!(grad_norms(&m.store, "encoder/") > 0.0);
    let refs: Vec<&Episode> = eps.iter().collect();
    let mut g = Graph::new();
    let loss = m.batch_loss(&mut g, &refs).unwrap();
    assert!(loss.recon.is_none());
}

#[test]
fn recon_loss_is_zero_for_unsupervised_decoder_only() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 2, 8);
    let refs: Vec<&Episode> = eps.iter().collect();
    let mut m = model(ModelKind::Crn, &cfg, 9);
    let mut g = Graph::new();
    let loss = m.batch_loss(&mut g, &refs).unwrap();
    m.store.zero_grads();
    g.backward(loss.recon.unwrap()).unwrap().accumulate_into(&mut m.store);
    assert_eq!(grad_norms(&m.store, "decoder/"), 0.0);
    // the projection feeds only the stop-gradient belief
    assert_eq!(grad_norms(&m.store, "projection/"), 0.0);
    assert!(grad_norms(&m.store, "encoder/") > 0.0);
    assert!(grad_norms(&m.store, "attention/") > 0.0);
    assert!(grad_norms(&m.store, "prediction/") > 0.0);
}

#[test]
fn zero_logits_give_log_two_losses() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 2, 8);
    let refs: Vec<&Episode> = eps.iter().collect();
    let mut m = model(ModelKind::Crn, &cfg, 9);
    for p in m.store.iter_mut() {
        p.value.fill(0.0);
    }
    let mut g = Graph::new();
    let loss = m.batch_loss(&mut g, &refs).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((g.value(loss.recon.unwrap()).item() - ln2).abs() < 1e-12);
    assert!((g.value(loss.dec).item() - ln2).abs() < 1e-12);
}

#[test]
fn zero_belief_decodes_are_episode_independent() {
    let cfg = tiny_config(4, 20);
    let m = model(ModelKind::CrnZeroBelief, &cfg, 10);
    let eps = episodes(4, 20, 5, 10);
    let refs: Vec<&Episode> = eps.iter().collect();
    let cond = m.conditioning(&refs).unwrap();
    assert!(cond.data().iter().all(|&x| x == 0.0));
    let decoded = m.decode_free_running(&cond).unwrap();
    for d in &decoded[1..] {
        assert_eq!(d.bits, decoded[0].bits);
        assert_eq!(d.logits, decoded[0].logits);
    }
}

#[test]
fn intervention_flag_changes_summaries() {
    let cfg = CrnConfig::default();
    let m = model(ModelKind::Crn, &cfg, 12);
    let values = vec![1, 0, 1, 1, 0];
    let a = InterventionSample {
        values: values.clone(),
        target: 0,
    };
    let b = InterventionSample { values, target: 3 };
    let oa = m.encode_step(&a).unwrap().unwrap();
    let ob = m.encode_step(&b).unwrap().unwrap();
    assert!(oa.o.iter().zip(&ob.o).any(|(x, y)| x != y));
    assert!(oa.attn.iter().zip(&ob.attn).any(|(x, y)| x != y));
}

#[test]
fn construction_and_training_are_deterministic() {
    let cfg = tiny_config(4, 6);
    let eps = episodes(4, 6, 2, 13);
    let refs: Vec<&Episode> = eps.iter().collect();
    let run = || {
        let mut m = model(ModelKind::Crn, &cfg, 14);
        let mut adam = crn::nn::AdamState::new(&m.store);
        let adam_cfg = crn::nn::AdamConfig::default();
        let metrics: Vec<_> = (0..3)
            .map(|_| m.train_iteration(&refs, &mut adam, &adam_cfg).unwrap())
            .collect();
        (metrics, m.store)
    };
    let (ma, sa) = run();
    let (mb, sb) = run();
    assert_eq!(ma, mb);
    for ((_, a), (_, b)) in sa.iter().zip(sb.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn free_running_decode_is_deterministic_argmax() {
    let cfg = tiny_config(4, 6);
    let m = model(ModelKind::Crn, &cfg, 15);
    let eps = episodes(4, 6, 2, 15);
    let refs: Vec<&Episode> = eps.iter().collect();
    let cond = m.conditioning(&refs).unwrap();
    let a = m.decode_free_running(&cond).unwrap();
    let b = m.decode_free_running(&cond).unwrap();
    assert_eq!(a.len(), 12);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.bits, y.bits);
        assert_eq!(x.bits.len(), 16);
        for (&bit, &z) in x.bits.iter().zip(&x.logits) {
            assert_eq!(bit, (z > 0.0) as u8);
        }
    }
}

#[test]
fn baseline_has_a_different_encoder_but_the_same_decoder() {
    let cfg = CrnConfig::default();
    let crn = model(ModelKind::Crn, &cfg, 16);
    let lstm = model(ModelKind::Lstm, &cfg, 16);
    assert_ne!(crn.store.num_scalars(), lstm.store.num_scalars());
    let decoder = |s: &ParamStore<f64>| -> Vec<(String, Vec<usize>)> {
        s.iter()
            .filter(|(_, p)| p.name.starts_with("decoder/"))
            .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    };
    assert_eq!(decoder(&crn.store), decoder(&lstm.store));
}

#[test]
fn mismatched_batches_are_rejected() {
    let cfg = tiny_config(4, 6);
    let m = model(ModelKind::Crn, &cfg, 17);
    let wrong = episodes(3, 6, 1, 17);
    let refs: Vec<&Episode> = wrong.iter().collect();
    assert!(m.batch_loss(&mut Graph::new(), &refs).is_err());
    assert!(m.batch_loss(&mut Graph::new(), &[]).is_err());
    let bad_cond: Tensor<f64> = Tensor::zeros(&[2, cfg.belief_dim + 1]);
    assert!(m.decode_free_running(&bad_cond).is_err());
}
