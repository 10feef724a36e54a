//! A rank-one plane `v0 ⊗ v1` sampled directly from its factors matches
//! bilinear sampling of the explicit `τ×τ` grid.

use ntsplat::texfield::{cp_plane_query, materialize_plane};

fn main() {
    let tau = 4;
    let v0 = [1.0, 0.5, -0.25, 0.0];
    let v1 = [0.2, 0.4, 0.6, 0.8];
    let plane = materialize_plane(&v0, &v1, 1);

    println!("materialized {tau}x{tau} plane:");
    for row in plane.chunks(tau) {
        println!(
            "  {}",
            row.iter().map(|v| format!("{v:>6.3}")).collect::<Vec<_>>().join(" ")
        );
    }
    for (u, v) in [(0.0, 0.0), (1.5, 2.25), (3.0, 3.0)] {
        println!("query ({u}, {v}) -> {:.4}", cp_plane_query(&v0, &v1, u, v, 1)[0]);
    }
}
