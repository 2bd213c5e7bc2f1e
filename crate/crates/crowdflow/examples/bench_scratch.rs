use std::time::Instant;

use crowdflow::matching::{assemble_cost, sinkhorn, ScoreMatrix};
use crowdflow::pipeline::MatcherParams;
use crowdflow::seeds::{stream_rng, Stream};
use crowdflow::train::{pair_forward, TrainPair};
use crowdflow::descriptors::{Descriptor, DescriptorSet, FrameTag};
use crowdflow::grid::GridCoord;
use ndarray::{Array1, Array2};
use rand::Rng;

fn main() {
    let mut rng = stream_rng(1, Stream::Test, 0);
    // Sinkhorn at the acceptance scale.
    for (n, m, lambda, iters, tol) in [
        (200usize, 200usize, 20.0, 100usize, 1e-9),
        (200, 200, 50.0, 100, 1e-9),
        (200, 180, 20.0, 300, 1e-9),
        (150, 150, 20.0, 100, 0.0),
    ] {
        let s = ScoreMatrix {
            values: Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0)),
        };
        let cost = assemble_cost(&s, 0.1);
        let t0 = Instant::now();
        let res = sinkhorn(&cost, lambda, iters, tol).unwrap();
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        println!(
            "sinkhorn n={n} m={m} lambda={lambda} iters_cfg={iters} tol={tol}: {dt:.2} ms, ran {}, residual {:.3e}",
            res.diag.iterations, res.diag.residual
        );
    }

    // Training forward+backward at realistic desk scale.
    let dim = 32;
    for count in [120usize, 180, 250] {
        let mk = |c: usize, tag, rng: &mut rand_chacha::ChaCha8Rng| DescriptorSet {
            items: (0..c)
                .map(|i| Descriptor {
                    vector: Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0) * 2.0),
                    coord: GridCoord::new(i % 28, (i / 28) % 20),
                })
                .collect(),
            frame: tag,
            grid_width: 28,
            grid_height: 20,
        };
        let set_a = mk(count, FrameTag::First, &mut rng);
        let set_b = mk(count, FrameTag::Second, &mut rng);
        let labels = crowdflow::train::MatchLabels {
            matched: (0..count / 2).map(|i| (i, i)).collect(),
            unmatched_a: (count / 2..count).collect(),
            unmatched_b: (count / 2..count).collect(),
        };
        let pair = TrainPair { set_a, set_b, labels };
        let params = MatcherParams::init(dim, 4, 1, &mut rng);
        let cfg = crowdflow::pipeline::MatchConfig {
            lambda: 20.0,
            sinkhorn_iters: 100,
            sinkhorn_tol: 0.0,
            topk: 4,
            theta: 0.2,
            adaptive_dustbin: true,
        };
        let t0 = Instant::now();
        let fwd = pair_forward(&params, &pair, &cfg).unwrap();
        let t_fwd = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let grads = fwd.tape.backward(fwd.loss_norm).unwrap();
        let t_bwd = t1.elapsed().as_secs_f64() * 1e3;
        let g = fwd.bound.gradients(&grads);
        println!(
            "train pair n=m={count}: forward {t_fwd:.1} ms, backward {t_bwd:.1} ms, loss {:.3}, grads {}",
            fwd.tape.scalar(fwd.loss_norm),
            g.len()
        );
    }
}
