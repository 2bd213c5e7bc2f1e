//! The matching core on a hand-built instance: similarity scores, the
//! dustbin-augmented cost, the entropic transport plan, and reverse top-K
//! extraction of hard correspondences.
//!
//! Run with: cargo run --release --example transport_matching

use crowdflow::matching::{
    assemble_cost, reverse_topk_match, similarity_matrix, sinkhorn,
};
use ndarray::array;

fn main() -> crowdflow::Result<()> {
    // Three descriptors in the first frame, four in the second. The first
    // two rows have clear partners (columns 0 and 2); the third is noise
    // and should fall into the dustbin. Column 3 has no source, so it
    // should absorb dustbin mass on the other side.
    let d_a = array![
        [1.0, 0.2, 0.0, 0.1],
        [0.0, 1.1, 0.9, 0.0],
        [0.2, -0.3, 0.1, 0.2],
    ];
    let d_b = array![
        [1.1, 0.1, 0.1, 0.0],
        [-0.4, 0.2, -0.1, 0.8],
        [0.1, 1.0, 1.0, 0.1],
        [0.3, -0.9, 0.4, -0.2],
    ];

    let scores = similarity_matrix(&d_a, &d_b)?;
    println!("similarity matrix:\n{:5.2}", scores.values);

    let dustbin_score = 0.4;
    let cost = assemble_cost(&scores, dustbin_score);
    println!("augmented cost ({}x{}):\n{:5.2}", cost.matrix.nrows(), cost.matrix.ncols(), cost.matrix);

    let solved = sinkhorn(&cost, 20.0, 200, 1e-9)?;
    println!(
        "solved in {} sweeps, marginal residual {:.2e}",
        solved.diag.iterations, solved.diag.residual
    );
    println!("transport plan:\n{:6.3}", solved.plan.plan);

    let matches = reverse_topk_match(&solved.plan, 2, 0.2)?;
    for (i, m) in matches.iter().enumerate() {
        match m {
            Some(j) => println!("descriptor {i} -> partner {j}"),
            None => println!("descriptor {i} -> dustbin (no counterpart)"),
        }
    }
    Ok(())
}
