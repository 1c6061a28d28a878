//! Causal relational network: per-variable relational encoder with
//! attention, additive belief state and an autoregressive LSTM decoder over
//! the flattened adjacency matrix. The monolithic LSTM baseline shares the
//! decoder and the batch interface.
//!
//! All batched computations use episode-major rows: row `e * k + t` holds
//! step `t` (0-based) of episode `e`.

use rand::Rng;

use crate::baselines::ModelKind;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, AdamConfig, AdamState, BoundLinear, BoundLstm, Graph, Linear, LstmCell, Mlp, ParamStore,
    Scalar, Tensor, Var,
};
use crate::scm::{Episode, InterventionSample};

#[derive(Clone, Debug, PartialEq)]
pub struct CrnConfig {
    pub n: usize,
    /// Hidden widths of each per-variable network.
    pub enc_hidden: (usize, usize),
    pub edge_feat_dim: usize,
    pub belief_dim: usize,
    pub dec_hidden: usize,
    pub attn_hidden: usize,
    pub pred_hidden: usize,
    pub proj_hidden: usize,
    pub bit_embed_dim: usize,
    pub k: usize,
    pub supervised_variant: bool,
    pub zero_belief: bool,
    pub decoder_train_stride: usize,
}

impl Default for CrnConfig {
    fn default() -> Self {
        Self {
            n: 5,
            enc_hidden: (128, 64),
            edge_feat_dim: 16,
            belief_dim: 64,
            dec_hidden: 128,
            attn_hidden: 32,
            pred_hidden: 32,
            proj_hidden: 128,
            bit_embed_dim: 16,
            k: 100,
            supervised_variant: false,
            zero_belief: false,
            decoder_train_stride: 1,
        }
    }
}

impl CrnConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.enc_hidden.0,
            self.enc_hidden.1,
            self.edge_feat_dim,
            self.belief_dim,
            self.dec_hidden,
            self.attn_hidden,
            self.pred_hidden,
            self.proj_hidden,
            self.bit_embed_dim,
            self.k,
            self.decoder_train_stride,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("all model dimensions must be positive".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.decoder_train_stride > self.k {
            return Err(Error::InvalidConfig(format!(
                "decoder_train_stride {} exceeds episode length {}",
                self.decoder_train_stride, self.k
            )));
        }
        Ok(())
    }

    /// Decoded steps (1-based) during training: multiples of the stride.
    pub fn decoded_steps(&self) -> Vec<usize> {
        (1..=self.k).filter(|t| t % self.decoder_train_stride == 0).collect()
    }
}

/// Additive belief `h^t = h^{t-1} + O^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    pub h: Vec<f64>,
    pub t: usize,
}

impl BeliefState {
    pub fn new(dim: usize) -> Self {
        Self { h: vec![0.0; dim], t: 0 }
    }
}

pub fn belief_update(state: &BeliefState, o: &[f64]) -> Result<BeliefState> {
    if o.len() != state.h.len() {
        return Err(Error::shape("belief_update", &[state.h.len()], &[o.len()]));
    }
    Ok(BeliefState {
        h: state.h.iter().zip(o).map(|(a, b)| a + b).collect(),
        t: state.t + 1,
    })
}

/// Encoder output for a single sample.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub o: Vec<f64>,
    pub pred_logits: Vec<f64>,
    /// Row-major `n×n`; row `i` holds the weights over sources `k ≠ i`, the
    /// diagonal is 0.
    pub attn: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedGraph {
    pub bits: Vec<u8>,
    pub logits: Vec<f64>,
}

/// Relational encoder parameters.
#[derive(Clone, Debug)]
pub struct RelationalEncoder {
    /// One network per source variable: `[x_i, flag_i] → (n-1)·d_e` edge features.
    pub sources: Vec<Mlp>,
    /// Per-source readout of a prediction logit from an edge feature.
    pub readouts: Vec<Linear>,
    /// Shared attention scorer over `[p_{k→i}, x_k, flag_k]`.
    pub attention: Mlp,
    /// Shared prediction head `O_i → logit`.
    pub prediction: Mlp,
    /// `concat(O_1..O_n) → O`.
    pub projection: Mlp,
}

/// Monolithic baseline encoder plus sequence LSTM.
#[derive(Clone, Debug)]
pub struct MonolithicEncoder {
    pub mlp: Mlp,
    pub lstm: LstmCell,
    pub to_cond: Linear,
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Relational(RelationalEncoder),
    Monolithic(MonolithicEncoder),
}

#[derive(Clone, Debug)]
pub struct GraphDecoder {
    /// Embeddings of the previous bit; rows are `[start, 0, 1]`.
    pub embed: crate::nn::ParamId,
    pub lstm: LstmCell,
    pub out: Linear,
}

/// A model of any [`ModelKind`]; all kinds share this interface.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub kind: ModelKind,
    pub config: CrnConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: GraphDecoder,
}

/// Graph handles produced by [`Model::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Decoder conditioning per row, `R × belief_dim`.
    pub cond: Var,
    /// Raw (pre stop-gradient) beliefs per row; `None` for the baseline.
    pub belief: Option<Var>,
    pub step_out: Option<Var>,
    pub pred_logits: Option<Var>,
    pub attn: Option<Var>,
    pub recon: Option<Var>,
}

/// Scalar results of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationMetrics {
    pub loss: f64,
    pub recon_loss: f64,
    pub dec_loss: f64,
    /// Teacher-forced argmax accuracy at the final decoded step.
    pub tf_acc_full: f64,
    /// As `tf_acc_full`, restricted to the strictly lower triangle.
    pub tf_acc_lower: f64,
}

fn check_batch(config: &CrnConfig, episodes: &[&Episode]) -> Result<()> {
    if episodes.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    for ep in episodes {
        if ep.n() != config.n || ep.len() != config.k {
            return Err(Error::InvalidConfig(format!(
                "episode with n = {}, k = {} in a batch configured for n = {}, k = {}",
                ep.n(),
                ep.len(),
                config.n,
                config.k
            )));
        }
    }
    Ok(())
}

impl GraphDecoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &CrnConfig, rng: &mut impl Rng) -> Result<Self> {
        let embed = store.add_glorot("decoder/embed", 3, cfg.bit_embed_dim, rng)?;
        let lstm = LstmCell::new(store, "decoder/lstm", cfg.bit_embed_dim + cfg.belief_dim, cfg.dec_hidden, rng)?;
        let out = Linear::new(store, "decoder/out", cfg.dec_hidden, 1, rng)?;
        Ok(Self { embed, lstm, out })
    }
}

struct BoundDecoder {
    /// `embed · W_bit`, one row per input token.
    token_table: Var,
    w_cond: Var,
    lstm: BoundLstm,
    out: BoundLinear,
}

impl GraphDecoder {
    fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, cfg: &CrnConfig) -> Result<BoundDecoder> {
        let lstm = self.lstm.bind(g, store);
        let embed = g.param(store, self.embed);
        let e = cfg.bit_embed_dim;
        let w_bit = g.gather_rows(lstm.w_input, &(0..e).collect::<Vec<_>>())?;
        let w_cond = g.gather_rows(lstm.w_input, &(e..e + cfg.belief_dim).collect::<Vec<_>>())?;
        let token_table = g.matmul(embed, w_bit)?;
        Ok(BoundDecoder {
            token_table,
            w_cond,
            lstm,
            out: self.out.bind(g, store),
        })
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(kind: ModelKind, config: CrnConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut config = config;
        config.supervised_variant = kind == ModelKind::CrnSupervised;
        config.zero_belief = kind == ModelKind::CrnZeroBelief;
        config.validate()?;
        let mut store = ParamStore::new();
        let n = config.n;
        let de = config.edge_feat_dim;
        let encoder = match kind {
            ModelKind::Lstm => Encoder::Monolithic(MonolithicEncoder {
                mlp: Mlp::new(
                    &mut store,
                    "encoder/mlp",
                    &[2 * n, config.enc_hidden.0, config.enc_hidden.1, config.belief_dim],
                    rng,
                )?,
                lstm: LstmCell::new(&mut store, "encoder/lstm", config.belief_dim, config.dec_hidden, rng)?,
                to_cond: Linear::new(&mut store, "encoder/to_cond", config.dec_hidden, config.belief_dim, rng)?,
            }),
            _ => {
                let mut sources = Vec::with_capacity(n);
                let mut readouts = Vec::with_capacity(n);
                for i in 0..n {
                    sources.push(Mlp::new(
                        &mut store,
                        &format!("encoder/src{i}"),
                        &[2, config.enc_hidden.0, config.enc_hidden.1, (n - 1) * de],
                        rng,
                    )?);
                    readouts.push(Linear::new(&mut store, &format!("encoder/readout{i}"), de, 1, rng)?);
                }
                Encoder::Relational(RelationalEncoder {
                    sources,
                    readouts,
                    attention: Mlp::new(&mut store, "attention", &[3, config.attn_hidden, 1], rng)?,
                    prediction: Mlp::new(&mut store, "prediction", &[de, config.pred_hidden, 1], rng)?,
                    projection: Mlp::new(
                        &mut store,
                        "projection",
                        &[n * de, config.proj_hidden, config.belief_dim],
                        rng,
                    )?,
                })
            }
        };
        let decoder = GraphDecoder::new(&mut store, &config, rng)?;
        Ok(Self {
            kind,
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            kind: self.kind,
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Builds the encoder and sequence model for a batch of samples laid out
    /// as `groups` episodes of `group_len` consecutive rows.
    pub fn encode_rows(&self, g: &mut Graph<T>, samples: &[&InterventionSample], group_len: usize) -> Result<Encoded> {
        let n = self.config.n;
        let rows = samples.len();
        if rows == 0 || rows % group_len != 0 {
            return Err(Error::InvalidArgument(format!("{rows} rows do not split into groups of {group_len}")));
        }
        for s in samples {
            if s.values.len() != n || s.target >= n {
                return Err(Error::shape("encode", &[n], &[s.values.len()]));
            }
        }
        match &self.encoder {
            Encoder::Relational(enc) => self.encode_relational(g, enc, samples, group_len),
            Encoder::Monolithic(enc) => self.encode_monolithic(g, enc, samples, group_len),
        }
    }

    fn encode_relational(
        &self,
        g: &mut Graph<T>,
        enc: &RelationalEncoder,
        samples: &[&InterventionSample],
        group_len: usize,
    ) -> Result<Encoded> {
        let n = self.config.n;
        let de = self.config.edge_feat_dim;
        let rows = samples.len();
        let st = &self.store;
        let col = |f: &dyn Fn(&InterventionSample) -> u8| -> Tensor<T> {
            Tensor::matrix(rows, 1, samples.iter().map(|s| T::from_u8(f(s)).unwrap()).collect())
        };
        let xs: Vec<Var> = (0..n).map(|i| g.input(col(&|s| s.values[i]))).collect();
        let flags: Vec<Var> = (0..n).map(|i| g.input(col(&|s| (s.target == i) as u8))).collect();

        // edge[i][k]: feature of the edge i → k; pred[i][k]: its readout
        let mut edge = vec![vec![None; n]; n];
        let mut pred = vec![vec![None; n]; n];
        for i in 0..n {
            let u = g.concat_cols(&[xs[i], flags[i]])?;
            let net = enc.sources[i].bind(g, st);
            let readout = enc.readouts[i].bind(g, st);
            let feats = net.forward(g, u)?;
            for (slot, k) in (0..n).filter(|&k| k != i).enumerate() {
                let e = g.slice_cols(feats, slot * de, de)?;
                pred[i][k] = Some(readout.forward(g, e)?);
                edge[i][k] = Some(e);
            }
        }

        let attn_net = enc.attention.bind(g, st);
        let mut scores = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for k in (0..n).filter(|&k| k != i) {
                let inp = g.concat_cols(&[pred[k][i].unwrap(), xs[k], flags[k]])?;
                scores.push(attn_net.forward(g, inp)?);
            }
        }
        let scores = g.concat_cols(&scores)?;
        let attn = g.softmax_groups(scores, n - 1)?;

        let pred_net = enc.prediction.bind(g, st);
        let mut summaries = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc: Option<Var> = None;
            for (slot, k) in (0..n).filter(|&k| k != i).enumerate() {
                let w = g.slice_cols(attn, i * (n - 1) + slot, 1)?;
                let term = g.mul_column(edge[k][i].unwrap(), w)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term)?,
                });
            }
            let o_i = acc.expect("n >= 2");
            logits.push(pred_net.forward(g, o_i)?);
            summaries.push(o_i);
        }
        let pred_logits = g.concat_cols(&logits)?;
        let concat = g.concat_cols(&summaries)?;
        let proj = enc.projection.bind(g, st);
        let step_out = proj.forward(g, concat)?;

        let targets = Tensor::matrix(
            rows,
            n,
            samples.iter().flat_map(|s| s.values.iter().map(|&v| T::from_u8(v).unwrap())).collect(),
        );
        let mask = Tensor::matrix(
            rows,
            n,
            samples.iter().flat_map(|s| s.flags().map(|f| T::from_u8(1 - f).unwrap())).collect(),
        );
        let recon = g.bce_with_logits(pred_logits, targets, mask)?;

        let belief = g.cumsum_rows(step_out, group_len)?;
        let cond = if self.config.zero_belief {
            g.input(Tensor::zeros(&[rows, self.config.belief_dim]))
        } else if self.config.supervised_variant {
            belief
        } else {
            g.stop_gradient(belief)
        };
        Ok(Encoded {
            cond,
            belief: Some(belief),
            step_out: Some(step_out),
            pred_logits: Some(pred_logits),
            attn: Some(attn),
            recon: Some(recon),
        })
    }

    fn encode_monolithic(
        &self,
        g: &mut Graph<T>,
        enc: &MonolithicEncoder,
        samples: &[&InterventionSample],
        group_len: usize,
    ) -> Result<Encoded> {
        let n = self.config.n;
        let rows = samples.len();
        let groups = rows / group_len;
        let st = &self.store;
        let mut data = Vec::with_capacity(rows * 2 * n);
        for s in samples {
            data.extend(s.values.iter().map(|&v| T::from_u8(v).unwrap()));
            data.extend((0..n).map(|i| if i == s.target { T::one() } else { T::zero() }));
        }
        let input = g.input(Tensor::matrix(rows, 2 * n, data));
        let mlp = enc.mlp.bind(g, st);
        let feats = mlp.forward(g, input)?;

        let lstm = enc.lstm.bind(g, st);
        let to_cond = enc.to_cond.bind(g, st);
        let hd = self.config.dec_hidden;
        let mut h = g.input(Tensor::zeros(&[groups, hd]));
        let mut c = g.input(Tensor::zeros(&[groups, hd]));
        let mut per_step = Vec::with_capacity(group_len);
        for t in 0..group_len {
            let idx: Vec<usize> = (0..groups).map(|e| e * group_len + t).collect();
            let x_t = g.gather_rows(feats, &idx)?;
            let (h2, c2) = lstm.step(g, x_t, h, c)?;
            h = h2;
            c = c2;
            per_step.push(h);
        }
        // time-major stack back to episode-major rows
        let stacked = g.concat_rows(&per_step)?;
        let order: Vec<usize> = (0..rows).map(|r| (r % group_len) * groups + r / group_len).collect();
        let hidden = g.gather_rows(stacked, &order)?;
        let cond = to_cond.forward(g, hidden)?;
        Ok(Encoded {
            cond,
            belief: None,
            step_out: Some(feats),
            pred_logits: None,
            attn: None,
            recon: None,
        })
    }

    pub fn encode(&self, g: &mut Graph<T>, episodes: &[&Episode]) -> Result<Encoded> {
        check_batch(&self.config, episodes)?;
        let samples: Vec<&InterventionSample> = episodes.iter().flat_map(|e| e.samples.iter()).collect();
        self.encode_rows(g, &samples, self.config.k)
    }

    /// Teacher-forced decoder loss over rows of `cond` whose ground truth is
    /// `adjacency[r]` (each of length n²). Returns `(loss, logits)`.
    pub fn decode_teacher_forced(&self, g: &mut Graph<T>, cond: Var, adjacency: &[&[u8]]) -> Result<(Var, Var)> {
        let nn = self.config.n * self.config.n;
        let rows = adjacency.len();
        if g.shape(cond) != [rows, self.config.belief_dim] {
            return Err(Error::shape("decode_teacher_forced", g.shape(cond), &[rows, self.config.belief_dim]));
        }
        if let Some(bad) = adjacency.iter().find(|a| a.len() != nn) {
            return Err(Error::shape("decode_teacher_forced", &[bad.len()], &[nn]));
        }
        let dec = self.decoder.bind(g, &self.store, &self.config)?;
        let cond_proj = g.matmul(cond, dec.w_cond)?;
        let cond_proj = g.add_row(cond_proj, dec.lstm.bias)?;
        let hd = self.config.dec_hidden;
        let mut h = g.input(Tensor::zeros(&[rows, hd]));
        let mut c = g.input(Tensor::zeros(&[rows, hd]));
        let mut logits = Vec::with_capacity(nn);
        for s in 0..nn {
            let tokens: Vec<usize> = adjacency
                .iter()
                .map(|a| if s == 0 { 0 } else { 1 + a[s - 1] as usize })
                .collect();
            let tok = g.gather_rows(dec.token_table, &tokens)?;
            let x_proj = g.add(tok, cond_proj)?;
            let (h2, c2) = dec.lstm.step_projected(g, x_proj, h, c)?;
            h = h2;
            c = c2;
            logits.push(dec.out.forward(g, h)?);
        }
        let logits = g.concat_cols(&logits)?;
        let targets = Tensor::matrix(
            rows,
            nn,
            adjacency
                .iter()
                .flat_map(|a| a.iter().map(|&b| T::from_u8(b).unwrap()))
                .collect(),
        );
        let loss = g.bce_with_logits(logits, targets, Tensor::full(&[rows, nn], T::one()))?;
        Ok((loss, logits))
    }

    /// Argmax decoding fed by the model's own previous bits, one row of
    /// `cond` per graph.
    pub fn decode_free_running(&self, cond: &Tensor<T>) -> Result<Vec<DecodedGraph>> {
        let (rows, dim) = cond.dims2();
        if dim != self.config.belief_dim {
            return Err(Error::shape("decode_free_running", cond.shape(), &[rows, self.config.belief_dim]));
        }
        let nn = self.config.n * self.config.n;
        let hd = self.config.dec_hidden;
        let mut h = Tensor::zeros(&[rows, hd]);
        let mut c = Tensor::zeros(&[rows, hd]);
        let mut prev = vec![0usize; rows];
        let mut out: Vec<DecodedGraph> = (0..rows)
            .map(|_| DecodedGraph {
                bits: Vec::with_capacity(nn),
                logits: Vec::with_capacity(nn),
            })
            .collect();
        for _ in 0..nn {
            let mut g = Graph::new();
            let dec = self.decoder.bind(&mut g, &self.store, &self.config)?;
            let cv = g.input(cond.clone());
            let cond_proj = g.matmul(cv, dec.w_cond)?;
            let cond_proj = g.add_row(cond_proj, dec.lstm.bias)?;
            let tok = g.gather_rows(dec.token_table, &prev)?;
            let x_proj = g.add(tok, cond_proj)?;
            let hv = g.input(h);
            let cv = g.input(c);
            let (h2, c2) = dec.lstm.step_projected(&mut g, x_proj, hv, cv)?;
            let logit = dec.out.forward(&mut g, h2)?;
            for (r, graph) in out.iter_mut().enumerate() {
                let z = g.value(logit).at(r, 0).to_f64().unwrap();
                let bit = (z > 0.0) as u8;
                graph.logits.push(z);
                graph.bits.push(bit);
                prev[r] = 1 + bit as usize;
            }
            h = g.value(h2).clone();
            c = g.value(c2).clone();
        }
        Ok(out)
    }

    /// Per-row decoder conditioning for whole episodes (`E·k × belief_dim`),
    /// computed without building a reverse pass.
    pub fn conditioning(&self, episodes: &[&Episode]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, episodes)?;
        Ok(g.value(enc.cond).clone())
    }

    /// Total training loss for a batch: mean reconstruction loss plus mean
    /// teacher-forced decoder loss over the decoded steps.
    pub fn batch_loss(&self, g: &mut Graph<T>, episodes: &[&Episode]) -> Result<BatchLoss> {
        let enc = self.encode(g, episodes)?;
        let k = self.config.k;
        let steps = self.config.decoded_steps();
        let adjs: Vec<Vec<u8>> = episodes.iter().map(|e| e.adjacency()).collect();
        let mut rows = Vec::with_capacity(episodes.len() * steps.len());
        let mut truth: Vec<&[u8]> = Vec::with_capacity(rows.capacity());
        for (e, adj) in adjs.iter().enumerate() {
            for &t in &steps {
                rows.push(e * k + t - 1);
                truth.push(adj);
            }
        }
        let cond = if steps.len() == k {
            enc.cond
        } else {
            g.gather_rows(enc.cond, &rows)?
        };
        let (dec_loss, logits) = self.decode_teacher_forced(g, cond, &truth)?;
        let total = match enc.recon {
            Some(r) => g.add(r, dec_loss)?,
            None => dec_loss,
        };
        Ok(BatchLoss {
            total,
            recon: enc.recon,
            dec: dec_loss,
            logits,
            final_rows: (0..episodes.len()).map(|e| (e + 1) * steps.len() - 1).collect(),
            truth: adjs,
        })
    }

    /// One optimizer step on a batch of episodes.
    pub fn train_iteration(
        &mut self,
        episodes: &[&Episode],
        adam: &mut AdamState<T>,
        cfg: &AdamConfig,
    ) -> Result<IterationMetrics> {
        let mut g = Graph::new();
        let loss = self.batch_loss(&mut g, episodes)?;
        let metrics = loss.metrics(&g);
        if metrics.loss.is_finite() {
            self.store.zero_grads();
            g.backward(loss.total)?.accumulate_into(&mut self.store);
            adam_step(&mut self.store, adam, cfg);
        }
        Ok(metrics)
    }

    /// Single-sample encoder pass; `None` for the monolithic baseline.
    pub fn encode_step(&self, sample: &InterventionSample) -> Result<Option<StepOutput>> {
        if !matches!(self.encoder, Encoder::Relational(_)) {
            return Ok(None);
        }
        let n = self.config.n;
        let mut g = Graph::new();
        let enc = self.encode_rows(&mut g, &[sample], 1)?;
        let to_f64 = |v: Var| g.value(v).to_f64();
        let flat = to_f64(enc.attn.unwrap());
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            for (slot, k) in (0..n).filter(|&k| k != i).enumerate() {
                attn[i * n + k] = flat[i * (n - 1) + slot];
            }
        }
        Ok(Some(StepOutput {
            o: to_f64(enc.step_out.unwrap()),
            pred_logits: to_f64(enc.pred_logits.unwrap()),
            attn,
        }))
    }
}

/// Loss handles of one batch.
pub struct BatchLoss {
    pub total: Var,
    pub recon: Option<Var>,
    pub dec: Var,
    pub logits: Var,
    /// Rows of `logits` belonging to the last decoded step of each episode.
    pub final_rows: Vec<usize>,
    pub truth: Vec<Vec<u8>>,
}

impl BatchLoss {
    pub fn metrics<T: Scalar>(&self, g: &Graph<T>) -> IterationMetrics {
        let v = |x: Var| g.value(x).item().to_f64().unwrap();
        let logits = g.value(self.logits);
        let mut full = (0.0, 0.0);
        let mut lower = (0.0, 0.0);
        for (&r, truth) in self.final_rows.iter().zip(&self.truth) {
            let bits: Vec<u8> = logits.row(r).iter().map(|z| (z.to_f64().unwrap() > 0.0) as u8).collect();
            let (f, l) = crate::harness::edge_accuracy(&bits, truth).expect("decoded length is n²");
            let n = (truth.len() as f64).sqrt().round();
            full.0 += f * n * n;
            full.1 += n * n;
            lower.0 += l * n * (n - 1.0) / 2.0;
            lower.1 += n * (n - 1.0) / 2.0;
        }
        IterationMetrics {
            loss: v(self.total),
            recon_loss: self.recon.map(v).unwrap_or(0.0),
            dec_loss: v(self.dec),
            tf_acc_full: full.0 / f64::max(full.1, 1.0),
            tf_acc_lower: lower.0 / f64::max(lower.1, 1.0),
        }
    }
}
