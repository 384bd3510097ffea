//! Spectral and spatial similarity between circuit collections.

use decgan::hypergraph::{hard_capacity_report, Hypergraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h = Hypergraph::embed_circuits(&[vec![0, 1, 4, 5], vec![0, 1, 2], vec![2, 3], vec![3, 4]], 6)?;
    println!("vertex degrees {:?}", h.vertex_degrees());
    println!("edge degrees {:?}", h.edge_degrees());
    println!("laplacian spectrum {:?}", h.spectrum()?.eigenvalues);

    let a = vec![vec![0, 1, 2], vec![5, 6, 7]];
    for b in [a.clone(), vec![vec![0, 1, 3], vec![5, 6, 7]], vec![vec![2, 3, 4], vec![4, 5, 6, 7]]] {
        let r = hard_capacity_report(&a, &b, 10)?;
        println!("{a:?} vs {b:?}: spatial {:.4}, spectral {:.4}", r.spatial_similarity, r.spectral_similarity);
    }
    Ok(())
}
