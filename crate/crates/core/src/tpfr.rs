//! Peer-regularized feature recombination in latent space.
//!
//! Style transfer happens here, in two stages. Stage one builds a k-nearest-
//! neighbor graph between the content codes of the input and target images
//! and rewrites the input's style as an attention-weighted convex combination
//! of the target's style at the neighboring sites; content passes through
//! untouched. Stage two builds a second graph between the *new* style code
//! and the target's style code and recombines the content the same way, so
//! the final code is `[recombined content, recombined style]`.
//!
//! Neighbor selection is a discrete choice and stays off the gradient tape;
//! attention scores and the recombination itself are differentiable.

use crate::error::{Error, Result};
use crate::nn::{LatentCode, NetConfig, WEIGHT_INIT_STD};
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

/// Negative slope applied to the exponentiated attention scores. The scores
/// are strictly positive, so the slope never actually engages; it is kept to
/// mirror the published normalization exactly.
pub const ATTENTION_LRELU_SLOPE: f64 = 0.2;

/// k-NN graph from P query sites to Q target sites, per batch element.
///
/// `neighbor_index` and `distances` are `[B, P, K]` row-major; indices lie in
/// `[0, Q)` and distances are non-decreasing along K. Ties break toward the
/// lower flat index, which makes the graph deterministic.
#[derive(Clone, Debug)]
pub struct PeerGraph {
    pub neighbor_index: Vec<u32>,
    pub distances: Vec<f64>,
    pub batch: usize,
    pub query_sites: usize,
    pub target_sites: usize,
    pub k: usize,
}

impl PeerGraph {
    /// Neighbor indices of query site `p` in batch element `b`.
    pub fn neighbors_of(&self, b: usize, p: usize) -> &[u32] {
        let base = (b * self.query_sites + p) * self.k;
        &self.neighbor_index[base..base + self.k]
    }

    /// Neighbor distances of query site `p` in batch element `b`.
    pub fn distances_of(&self, b: usize, p: usize) -> &[f64] {
        let base = (b * self.query_sites + p) * self.k;
        &self.distances[base..base + self.k]
    }
}

/// Scores one (query, neighbor) feature pair: a fully connected map from the
/// `2d`-dimensional concatenation to a scalar, realized as a 1x1 convolution
/// over a `[B, 2d, P, K]` pair arrangement.
pub struct AttentionHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AttentionHead {
    pub fn init<R: Rng>(guide_channels: usize, rng: &mut R) -> Result<AttentionHead> {
        let weight = Tensor::randn(&[1, 2 * guide_channels, 1, 1], 0.0, WEIGHT_INIT_STD, rng)?;
        weight.set_requires_grad(true);
        Ok(AttentionHead { weight, bias: Tensor::param(alloc::vec![0.0], &[1])? })
    }

    /// Guide channel count `d` this head scores.
    pub fn guide_channels(&self) -> usize {
        self.weight.shape()[1] / 2
    }

    /// Raw scores: `[B, 2d, P, K] -> [B, 1, P, K]`.
    pub fn score(&self, pairs: &Tensor) -> Result<Tensor> {
        pairs.conv2d(&self.weight, &self.bias, 1, 0)
    }
}

/// Exact k-nearest-neighbor graph under Euclidean distance over the channel
/// dimension. `query` is `[B, d, h, w]`, `target` is `[B, d, h', w']`; K must
/// not exceed the target site count.
pub fn knn_graph(query: &Tensor, target: &Tensor, k: usize) -> Result<PeerGraph> {
    let qs = query.shape();
    let ts = target.shape();
    if qs.len() != 4 || ts.len() != 4 {
        return Err(Error::shape(
            "knn_graph",
            alloc::format!("expected [batch, ch, h, w] feature maps, got {qs:?} and {ts:?}"),
        ));
    }
    if qs[0] != ts[0] || qs[1] != ts[1] {
        return Err(Error::shape(
            "knn_graph",
            alloc::format!("query {qs:?} and target {ts:?} must agree in batch and channels"),
        ));
    }
    let (b, d) = (qs[0], qs[1]);
    let p_sites = qs[2] * qs[3];
    let q_sites = ts[2] * ts[3];
    if k == 0 || k > q_sites {
        return Err(Error::arg(
            "knn_graph",
            alloc::format!("K must be in [1, {q_sites}] for {q_sites} target sites, got {k}"),
        ));
    }
    let qv = query.values();
    let tv = target.values();
    let mut neighbor_index = Vec::with_capacity(b * p_sites * k);
    let mut distances = Vec::with_capacity(b * p_sites * k);
    let mut ranked: Vec<(f64, u32)> = Vec::with_capacity(q_sites);
    // Site-major scratch copies: feature of site s is contiguous at s*d.
    let mut q_feats = alloc::vec![0.0; p_sites * d];
    let mut t_feats = alloc::vec![0.0; q_sites * d];
    for bi in 0..b {
        for c in 0..d {
            let q_plane = &qv[(bi * d + c) * p_sites..(bi * d + c + 1) * p_sites];
            for (s, v) in q_plane.iter().enumerate() {
                q_feats[s * d + c] = *v;
            }
            let t_plane = &tv[(bi * d + c) * q_sites..(bi * d + c + 1) * q_sites];
            for (s, v) in t_plane.iter().enumerate() {
                t_feats[s * d + c] = *v;
            }
        }
        for pi in 0..p_sites {
            let qf = &q_feats[pi * d..(pi + 1) * d];
            ranked.clear();
            for qi in 0..q_sites {
                let tf = &t_feats[qi * d..(qi + 1) * d];
                let mut acc = 0.0;
                for c in 0..d {
                    let diff = qf[c] - tf[c];
                    acc += diff * diff;
                }
                ranked.push((acc, qi as u32));
            }
            ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(sq, qi) in ranked.iter().take(k) {
                neighbor_index.push(qi);
                distances.push(libm::sqrt(sq));
            }
        }
    }
    Ok(PeerGraph { neighbor_index, distances, batch: b, query_sites: p_sites, target_sites: q_sites, k })
}

/// Normalized attention weights of each query site over its K neighbors.
///
/// `guide_query` is `[B, d, h, w]` (P = h*w sites), `guide_neighbors` is the
/// gathered `[B, d, P, K]`. Each pair is scored by `head`, exponentiated,
/// passed through LeakyReLU (a no-op on the positive scores), and normalized
/// over K — together an exact softmax of the raw scores. In training mode,
/// inverted dropout is then applied to the normalized weights; in eval mode
/// they sum to 1 and no randomness is consumed.
pub fn attention_weights<R: Rng>(
    head: &AttentionHead,
    guide_query: &Tensor,
    guide_neighbors: &Tensor,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let qs = guide_query.shape();
    let ns = guide_neighbors.shape();
    if qs.len() != 4 || ns.len() != 4 {
        return Err(Error::shape(
            "attention_weights",
            alloc::format!("expected 4-D guides, got {qs:?} and {ns:?}"),
        ));
    }
    let (b, d) = (qs[0], qs[1]);
    let p_sites = qs[2] * qs[3];
    if ns[0] != b || ns[1] != d || ns[2] != p_sites {
        return Err(Error::shape(
            "attention_weights",
            alloc::format!("neighbors {ns:?} do not match {p_sites} query sites with {d} channels"),
        ));
    }
    let k = ns[3];
    if 2 * d != head.weight.shape()[1] {
        return Err(Error::shape(
            "attention_weights",
            alloc::format!("head scores {} channels, guides have {d}", head.weight.shape()[1] / 2),
        ));
    }
    let queries = guide_query.reshape(&[b, d, p_sites, 1])?.broadcast_to(&[b, d, p_sites, k])?;
    let pairs = Tensor::concat(&[&queries, guide_neighbors], 1)?;
    let boosted = head.score(&pairs)?.exp()?.leaky_relu(ATTENTION_LRELU_SLOPE)?;
    let total = boosted.sum_axis(3, true)?;
    let weights = boosted.div(&total)?;
    if training && dropout_rate > 0.0 {
        weights.dropout(dropout_rate, training, rng)
    } else {
        Ok(weights)
    }
}

/// Rewrite each query site's value as the attention-weighted convex
/// combination of its K nearest target sites' values (nearest in the guide
/// feature space). Returns the recombined values, shaped like the query grid,
/// together with the attention weights `[B, 1, P, K]`.
pub fn peer_recombine<R: Rng>(
    guide_query: &Tensor,
    guide_target: &Tensor,
    values_target: &Tensor,
    k: usize,
    head: &AttentionHead,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let gt = guide_target.shape();
    let vt = values_target.shape();
    if vt.len() != 4 || gt[0] != vt[0] || gt[2] != vt[2] || gt[3] != vt[3] {
        return Err(Error::shape(
            "peer_recombine",
            alloc::format!("target guide {gt:?} and values {vt:?} must share batch and extent"),
        ));
    }
    let graph = knn_graph(guide_query, guide_target, k)?;
    let p_sites = graph.query_sites;
    let neighbors = guide_target.gather_sites(&graph.neighbor_index, p_sites, k)?;
    let weights = attention_weights(head, guide_query, &neighbors, dropout_rate, training, rng)?;
    let gathered = values_target.gather_sites(&graph.neighbor_index, p_sites, k)?;
    let mixed = gathered.mul(&weights)?.sum_axis(3, false)?;
    let qs = guide_query.shape();
    let out = mixed.reshape(&[vt[0], vt[1], qs[2], qs[3]])?;
    Ok((out, weights))
}

/// The two-stage recombination module: one attention head per stage, sized
/// to the stage's guide space (content for stage one, local + global style
/// for stage two).
pub struct TpfrModule {
    pub stage1_head: AttentionHead,
    pub stage2_head: AttentionHead,
    k: usize,
    dropout: f64,
}

impl TpfrModule {
    pub fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Result<TpfrModule> {
        Ok(TpfrModule {
            stage1_head: AttentionHead::init(cfg.content_channels, rng)?,
            stage2_head: AttentionHead::init(cfg.style_local_channels + cfg.style_global_channels, rng)?,
            k: cfg.k_neighbors,
            dropout: cfg.attention_dropout,
        })
    }

    pub fn k_neighbors(&self) -> usize {
        self.k
    }

    /// Full two-stage transfer: restyle `z_i` with the style of `z_t`.
    pub fn forward<R: Rng>(
        &self,
        z_i: &LatentCode,
        z_t: &LatentCode,
        training: bool,
        rng: &mut R,
    ) -> Result<LatentCode> {
        self.forward_stages(z_i, z_t, true, training, rng)
    }

    /// Transfer with stage two optionally disabled, leaving the content code
    /// untouched (a pure style swap; regression guard for the two-stage
    /// structure).
    pub fn forward_stages<R: Rng>(
        &self,
        z_i: &LatentCode,
        z_t: &LatentCode,
        enable_stage_two: bool,
        training: bool,
        rng: &mut R,
    ) -> Result<LatentCode> {
        self.check_code(z_i)?;
        self.check_code(z_t)?;
        if z_i.content.shape()[0] != z_t.content.shape()[0] {
            return Err(Error::shape(
                "tpfr_forward",
                alloc::format!(
                    "batch sizes differ: input {:?}, target {:?}",
                    z_i.content.shape(),
                    z_t.content.shape()
                ),
            ));
        }

        // Stage one: neighbors in content space donate their style.
        let (style_local, weights) = peer_recombine(
            &z_i.content,
            &z_t.content,
            &z_t.style_local,
            self.k,
            &self.stage1_head,
            self.dropout,
            training,
            rng,
        )?;
        // The global style vector has no spatial sites to recombine; it is
        // scaled by the mean attention mass instead, which keeps the whole
        // stage differentiable and reduces to the identity when each site
        // attends to a single neighbor.
        let mass = weights.sum_axis(3, false)?.mean_axis(2, false)?;
        let b = z_i.content.shape()[0];
        let style_global = z_t.style_global.mul(&mass.reshape(&[b, 1, 1, 1])?)?;

        if !enable_stage_two {
            return Ok(LatentCode { content: z_i.content.clone(), style_local, style_global });
        }

        // Stage two: neighbors in the *new* style space donate their content.
        let cg = style_global.shape()[1];
        let qs = style_local.shape();
        let ts = z_t.style_local.shape();
        let query_guide = Tensor::concat(
            &[&style_local, &style_global.broadcast_to(&[b, cg, qs[2], qs[3]])?],
            1,
        )?;
        let target_guide = Tensor::concat(
            &[&z_t.style_local, &z_t.style_global.broadcast_to(&[b, cg, ts[2], ts[3]])?],
            1,
        )?;
        let (content, _) = peer_recombine(
            &query_guide,
            &target_guide,
            &z_t.content,
            self.k,
            &self.stage2_head,
            self.dropout,
            training,
            rng,
        )?;
        Ok(LatentCode { content, style_local, style_global })
    }

    fn check_code(&self, z: &LatentCode) -> Result<()> {
        let cc = z.content.shape()[1];
        let cs = z.style_local.shape()[1];
        let cg = z.style_global.shape()[1];
        if cc != self.stage1_head.guide_channels() || cs + cg != self.stage2_head.guide_channels() {
            return Err(Error::shape(
                "tpfr_forward",
                alloc::format!(
                    "code channels ({cc} content, {cs}+{cg} style) do not match this module's heads ({} and {})",
                    self.stage1_head.guide_channels(),
                    self.stage2_head.guide_channels()
                ),
            ));
        }
        if z.content.shape()[2..] != z.style_local.shape()[2..] {
            return Err(Error::shape(
                "tpfr_forward",
                alloc::format!(
                    "content {:?} and local style {:?} grids differ",
                    z.content.shape(),
                    z.style_local.shape()
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((alloc::format!("{prefix}.stage1.weight"), self.stage1_head.weight.clone()));
        out.push((alloc::format!("{prefix}.stage1.bias"), self.stage1_head.bias.clone()));
        out.push((alloc::format!("{prefix}.stage2.weight"), self.stage2_head.weight.clone()));
        out.push((alloc::format!("{prefix}.stage2.bias"), self.stage2_head.bias.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from;

    fn random_code(seed: u64, b: usize, c: usize, h: usize, w: usize) -> LatentCode {
        let mut rng = stream_from(seed, "code");
        LatentCode {
            content: Tensor::randn(&[b, c, h, w], 0.0, 1.0, &mut rng).unwrap(),
            style_local: Tensor::randn(&[b, c, h, w], 0.0, 1.0, &mut rng).unwrap(),
            style_global: Tensor::randn(&[b, c, 1, 1], 0.0, 1.0, &mut rng).unwrap(),
        }
    }

    fn test_module(seed: u64, c: usize, k: usize) -> TpfrModule {
        let mut cfg = NetConfig::desk();
        cfg.content_channels = c;
        cfg.style_local_channels = c;
        cfg.style_global_channels = c;
        cfg.k_neighbors = k;
        let mut rng = stream_from(seed, "init");
        TpfrModule::init(&cfg, &mut rng).unwrap()
    }

    fn zeroed_head(d: usize) -> AttentionHead {
        let mut rng = stream_from(0, "head");
        let head = AttentionHead::init(d, &mut rng).unwrap();
        head.weight.set_values(&alloc::vec![0.0; 2 * d]).unwrap();
        head
    }

    #[test]
    fn knn_nearest_of_two_queries() {
        // Scalar features: queries 0 and 10 against targets 1, 9, 20.
        let query = Tensor::new(alloc::vec![0.0, 10.0], &[1, 1, 1, 2]).unwrap();
        let target = Tensor::new(alloc::vec![1.0, 9.0, 20.0], &[1, 1, 1, 3]).unwrap();
        let g = knn_graph(&query, &target, 1).unwrap();
        assert_eq!(g.neighbor_index, alloc::vec![0, 1]);
        assert_eq!(g.distances, alloc::vec![1.0, 1.0]);
    }

    #[test]
    fn knn_with_k_equal_q_covers_every_target() {
        let mut rng = stream_from(1, "knn");
        let query = Tensor::randn(&[2, 3, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let target = Tensor::randn(&[2, 3, 3, 2], 0.0, 1.0, &mut rng).unwrap();
        let g = knn_graph(&query, &target, 6).unwrap();
        for b in 0..2 {
            for p in 0..4 {
                let mut got: Vec<u32> = g.neighbors_of(b, p).to_vec();
                got.sort_unstable();
                assert_eq!(got, alloc::vec![0, 1, 2, 3, 4, 5]);
                let d = g.distances_of(b, p);
                assert!(d.windows(2).all(|w| w[0] <= w[1]), "distances must be sorted");
            }
        }
    }

    #[test]
    fn knn_self_match_at_k1() {
        let mut rng = stream_from(2, "knn");
        let x = Tensor::randn(&[1, 4, 2, 3], 0.0, 1.0, &mut rng).unwrap();
        let g = knn_graph(&x, &x, 1).unwrap();
        for p in 0..6 {
            assert_eq!(g.neighbors_of(0, p), &[p as u32]);
            assert_eq!(g.distances_of(0, p), &[0.0]);
        }
    }

    #[test]
    fn knn_breaks_ties_toward_lower_index() {
        // Target sites 1 and 2 are equidistant from the query.
        let query = Tensor::new(alloc::vec![5.0], &[1, 1, 1, 1]).unwrap();
        let target = Tensor::new(alloc::vec![0.0, 4.0, 6.0, 9.0], &[1, 1, 1, 4]).unwrap();
        let g = knn_graph(&query, &target, 2).unwrap();
        assert_eq!(g.neighbors_of(0, 0), &[1, 2]);
    }

    #[test]
    fn knn_rejects_oversized_k() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(knn_graph(&x, &x, 5).is_err());
        assert!(knn_graph(&x, &x, 0).is_err());
        assert!(knn_graph(&x, &x, 4).is_ok());
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        let head = zeroed_head(2);
        let mut rng = stream_from(3, "attn");
        let query = Tensor::randn(&[1, 2, 1, 3], 0.0, 1.0, &mut rng).unwrap();
        let neighbors = Tensor::randn(&[1, 2, 3, 4], 0.0, 1.0, &mut rng).unwrap();
        let w = attention_weights(&head, &query, &neighbors, 0.0, false, &mut rng).unwrap();
        assert_eq!(w.shape(), alloc::vec![1, 1, 3, 4]);
        for v in w.values() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_neighbor_weights_match_scalar_softmax() {
        // Head reads only the neighbor feature, so raw scores are (ln 1, ln 3)
        // and the normalized weights must be (0.25, 0.75).
        let head = zeroed_head(1);
        head.weight.set_values(&[0.0, 1.0]).unwrap();
        let query = Tensor::zeros(&[1, 1, 1, 1]);
        let neighbors = Tensor::new(alloc::vec![0.0, libm::log(3.0)], &[1, 1, 1, 2]).unwrap();
        let mut rng = stream_from(4, "attn");
        let w = attention_weights(&head, &query, &neighbors, 0.0, false, &mut rng).unwrap();
        let v = w.values();
        assert!((v[0] - 0.25).abs() < 1e-12, "got {v:?}");
        assert!((v[1] - 0.75).abs() < 1e-12, "got {v:?}");
    }

    #[test]
    fn eval_weights_sum_to_one_for_random_heads() {
        let mut rng = stream_from(5, "attn");
        let head = AttentionHead::init(3, &mut rng).unwrap();
        let query = Tensor::randn(&[2, 3, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let neighbors = Tensor::randn(&[2, 3, 4, 5], 0.0, 1.0, &mut rng).unwrap();
        let w = attention_weights(&head, &query, &neighbors, 0.5, false, &mut rng).unwrap();
        let v = w.values();
        for chunk in v.chunks(5) {
            let s: f64 = chunk.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "weight sum {s}");
            assert!(chunk.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn literal_normalization_equals_direct_softmax() {
        // The published form normalizes LReLU(exp(score)); exp is positive so
        // this must agree with a max-shifted softmax of the raw scores.
        let mut rng = stream_from(6, "attn");
        let head = AttentionHead::init(2, &mut rng).unwrap();
        let query = Tensor::randn(&[1, 2, 3, 3], 0.0, 2.0, &mut rng).unwrap();
        let neighbors = Tensor::randn(&[1, 2, 9, 4], 0.0, 2.0, &mut rng).unwrap();
        let w = attention_weights(&head, &query, &neighbors, 0.0, false, &mut rng).unwrap();

        let p_sites = 9;
        let k = 4;
        let queries = query.reshape(&[1, 2, p_sites, 1]).unwrap().broadcast_to(&[1, 2, p_sites, k]).unwrap();
        let pairs = Tensor::concat(&[&queries, &neighbors], 1).unwrap();
        let raw = head.score(&pairs).unwrap().values();
        for (p, chunk) in raw.chunks(k).enumerate() {
            let m = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = chunk.iter().map(|s| libm::exp(s - m)).collect();
            let denom: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                let reference = e / denom;
                let got = w.values()[p * k + j];
                assert!((got - reference).abs() < 1e-12, "site {p} neighbor {j}: {got} vs {reference}");
            }
        }
    }

    #[test]
    fn training_dropout_rescales_surviving_weights() {
        let head = zeroed_head(1);
        let query = Tensor::zeros(&[1, 1, 4, 4]);
        let neighbors = Tensor::zeros(&[1, 1, 16, 2]);
        let mut rng = stream_from(7, "attn");
        let w = attention_weights(&head, &query, &neighbors, 0.5, true, &mut rng).unwrap();
        let mut kinds: Vec<f64> = w.values().to_vec();
        kinds.sort_by(f64::total_cmp);
        kinds.dedup();
        // Uniform weights are 0.5; inverted dropout keeps 0.0 or doubles to 1.0.
        assert!(kinds.iter().all(|v| *v == 0.0 || (*v - 1.0).abs() < 1e-15), "{kinds:?}");
        assert!(kinds.len() == 2, "expected both dropped and kept weights, got {kinds:?}");
    }

    #[test]
    fn recombine_k1_copies_the_nearest_value() {
        let head = zeroed_head(1);
        let query = Tensor::new(alloc::vec![0.0, 10.0], &[1, 1, 1, 2]).unwrap();
        let target = Tensor::new(alloc::vec![1.0, 9.0, 20.0], &[1, 1, 1, 3]).unwrap();
        let values = Tensor::new(alloc::vec![-7.0, 3.5, 99.0], &[1, 1, 1, 3]).unwrap();
        let mut rng = stream_from(8, "rec");
        let (out, w) = peer_recombine(&query, &target, &values, 1, &head, 0.0, false, &mut rng).unwrap();
        assert_eq!(out.values(), &[-7.0, 3.5]);
        assert_eq!(w.values(), &[1.0, 1.0]);
    }

    #[test]
    fn recombine_uniform_pair_averages_values() {
        let head = zeroed_head(1);
        let query = Tensor::new(alloc::vec![0.0], &[1, 1, 1, 1]).unwrap();
        let target = Tensor::new(alloc::vec![1.0, -1.0], &[1, 1, 1, 2]).unwrap();
        let values = Tensor::new(alloc::vec![2.0, 4.0], &[1, 1, 1, 2]).unwrap();
        let mut rng = stream_from(9, "rec");
        let (out, _) = peer_recombine(&query, &target, &values, 2, &head, 0.0, false, &mut rng).unwrap();
        assert!((out.values()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn recombined_values_stay_in_neighbor_hull() {
        let mut rng = stream_from(10, "rec");
        let head = AttentionHead::init(3, &mut rng).unwrap();
        let query = Tensor::randn(&[2, 3, 3, 3], 0.0, 1.0, &mut rng).unwrap();
        let target = Tensor::randn(&[2, 3, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let values = Tensor::randn(&[2, 3, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let k = 3;
        let (out, _) = peer_recombine(&query, &target, &values, k, &head, 0.0, false, &mut rng).unwrap();
        let graph = knn_graph(&query, &target, k).unwrap();
        let vv = values.values();
        let ov = out.values();
        for b in 0..2 {
            for c in 0..3 {
                for p in 0..9 {
                    let picked: Vec<f64> = graph
                        .neighbors_of(b, p)
                        .iter()
                        .map(|&q| vv[(b * 3 + c) * 16 + q as usize])
                        .collect();
                    let lo = picked.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = picked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let got = ov[(b * 3 + c) * 9 + p];
                    assert!(got >= lo - 1e-12 && got <= hi + 1e-12, "{got} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn recombine_rejects_mismatched_target_extents() {
        let head = zeroed_head(1);
        let query = Tensor::zeros(&[1, 1, 2, 2]);
        let target = Tensor::zeros(&[1, 1, 3, 3]);
        let values = Tensor::zeros(&[1, 1, 2, 3]);
        let mut rng = stream_from(11, "rec");
        assert!(peer_recombine(&query, &target, &values, 1, &head, 0.0, false, &mut rng).is_err());
    }

    #[test]
    fn stage_level_brute_force_reference() {
        // Independent explicit-loop recomputation of one peer_recombine call:
        // 2x2 query/target grids, two guide channels, two value channels, K=2.
        let mut rng = stream_from(12, "rec");
        let head = AttentionHead::init(2, &mut rng).unwrap();
        let query = Tensor::randn(&[1, 2, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let target = Tensor::randn(&[1, 2, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let values = Tensor::randn(&[1, 2, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let (out, _) = peer_recombine(&query, &target, &values, 2, &head, 0.0, false, &mut rng).unwrap();

        let qv = query.values();
        let tv = target.values();
        let vv = values.values();
        let hw = head.weight.values();
        let hb = head.bias.values()[0];
        for p in 0..4usize {
            // Distances from query site p to every target site.
            let mut ranked: Vec<(f64, usize)> = (0..4)
                .map(|q| {
                    let d0 = qv[p] - tv[q];
                    let d1 = qv[4 + p] - tv[4 + q];
                    (d0 * d0 + d1 * d1, q)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Literal attention: normalize LReLU(exp(score)).
            let mut boosted = [0.0; 2];
            for (j, &(_, q)) in ranked[..2].iter().enumerate() {
                let score = hw[0] * qv[p] + hw[1] * qv[4 + p] + hw[2] * tv[q] + hw[3] * tv[4 + q] + hb;
                let e = libm::exp(score);
                boosted[j] = if e > 0.0 { e } else { 0.2 * e };
            }
            let denom = boosted[0] + boosted[1];
            for c in 0..2usize {
                let mut acc = 0.0;
                for (j, &(_, q)) in ranked[..2].iter().enumerate() {
                    acc += boosted[j] / denom * vv[c * 4 + q];
                }
                let got = out.values()[c * 4 + p];
                assert!((got - acc).abs() < 1e-10, "site {p} ch {c}: {got} vs {acc}");
            }
        }
    }

    #[test]
    fn self_transfer_with_k1_is_the_identity() {
        let module = test_module(13, 3, 1);
        let z = random_code(14, 2, 3, 2, 2);
        let mut rng = stream_from(15, "fwd");
        let out = module.forward(&z, &z, false, &mut rng).unwrap();
        assert_eq!(out.content.values(), z.content.values());
        assert_eq!(out.style_local.values(), z.style_local.values());
        assert_eq!(out.style_global.values(), z.style_global.values());
    }

    #[test]
    fn output_shapes_follow_the_input_code() {
        for k in 1..=4 {
            let module = test_module(16, 3, k);
            let z_i = random_code(17, 2, 3, 2, 2);
            let z_t = random_code(18, 2, 3, 3, 2);
            let mut rng = stream_from(19, "fwd");
            let out = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
            assert_eq!(out.content.shape(), z_i.content.shape());
            assert_eq!(out.style_local.shape(), z_i.style_local.shape());
            assert_eq!(out.style_global.shape(), z_i.style_global.shape());
        }
    }

    #[test]
    fn eval_mode_consumes_no_randomness() {
        let module = test_module(20, 3, 2);
        let z_i = random_code(21, 1, 3, 2, 2);
        let z_t = random_code(22, 1, 3, 2, 2);
        let mut rng = stream_from(23, "fwd");
        let a = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
        assert_eq!(rng.get_word_pos(), 0);
        let b = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
        assert_eq!(a.content.values(), b.content.values());
        assert_eq!(a.style_local.values(), b.style_local.values());
    }

    #[test]
    fn permuting_target_sites_changes_nothing() {
        let module = test_module(24, 3, 2);
        let z_i = random_code(25, 1, 3, 2, 2);
        let z_t = random_code(26, 1, 3, 2, 2);
        // Reorder the 4 target sites; random features make distances distinct.
        let perm = [2usize, 0, 3, 1];
        let shuffle = |t: &Tensor| {
            let v = t.values();
            let mut out = alloc::vec![0.0; v.len()];
            for c in 0..3 {
                for (s, &src) in perm.iter().enumerate() {
                    out[c * 4 + s] = v[c * 4 + src];
                }
            }
            Tensor::new(out, &t.shape()).unwrap()
        };
        let z_t_perm = LatentCode {
            content: shuffle(&z_t.content),
            style_local: shuffle(&z_t.style_local),
            style_global: z_t.style_global.clone(),
        };
        let mut rng = stream_from(27, "fwd");
        let a = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
        let b = module.forward(&z_i, &z_t_perm, false, &mut rng).unwrap();
        assert_eq!(a.content.values(), b.content.values());
        assert_eq!(a.style_local.values(), b.style_local.values());
        assert_eq!(a.style_global.values(), b.style_global.values());
    }

    #[test]
    fn disabling_stage_two_keeps_content_untouched() {
        let module = test_module(28, 3, 2);
        let z_i = random_code(29, 1, 3, 2, 2);
        let z_t = random_code(30, 1, 3, 2, 2);
        let mut rng = stream_from(31, "fwd");
        let swap = module.forward_stages(&z_i, &z_t, false, false, &mut rng).unwrap();
        let full = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
        assert_eq!(swap.content.values(), z_i.content.values(), "style swap must not move content");
        assert_eq!(swap.style_local.values(), full.style_local.values());
        assert_eq!(swap.style_global.values(), full.style_global.values());
        assert_ne!(full.content.values(), z_i.content.values(), "stage two must recombine content");
    }

    #[test]
    fn gradients_reach_codes_and_heads() {
        let module = test_module(32, 3, 2);
        let z_i = random_code(33, 1, 3, 2, 2);
        let z_t = random_code(34, 1, 3, 2, 2);
        for t in [&z_i.content, &z_t.content, &z_t.style_local, &z_t.style_global] {
            t.set_requires_grad(true);
        }
        let mut rng = stream_from(35, "fwd");
        let out = module.forward(&z_i, &z_t, false, &mut rng).unwrap();
        let loss = out
            .content
            .sum_all()
            .unwrap()
            .add(&out.style_local.sum_all().unwrap())
            .unwrap()
            .add(&out.style_global.sum_all().unwrap())
            .unwrap();
        loss.backward().unwrap();
        let audit = [
            ("input content", &z_i.content),
            ("target content", &z_t.content),
            ("target local style", &z_t.style_local),
            ("target global style", &z_t.style_global),
            ("stage1 head", &module.stage1_head.weight),
            ("stage2 head", &module.stage2_head.weight),
        ];
        for (name, t) in audit {
            let g = t.grad().unwrap_or_else(|| panic!("{name} received no gradient"));
            assert!(g.iter().any(|v| *v != 0.0), "{name} gradient is identically zero");
        }
        // The input's own style never enters the computation.
        assert!(z_i.style_local.grad().is_none());
    }

    #[test]
    fn mismatched_code_widths_are_rejected() {
        let module = test_module(36, 3, 2);
        let z_i = random_code(37, 1, 3, 2, 2);
        let bad = random_code(38, 1, 4, 2, 2);
        let mut rng = stream_from(39, "fwd");
        assert!(module.forward(&z_i, &bad, false, &mut rng).is_err());
        let other_batch = random_code(40, 2, 3, 2, 2);
        assert!(module.forward(&z_i, &other_batch, false, &mut rng).is_err());
    }
}
