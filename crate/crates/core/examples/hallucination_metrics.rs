//! Local intrinsic dimension of points on a 3-dimensional cube embedded in
//! 10 dimensions, and semantic entropy of a few answer sets.

use paramspec::halluc::{lid_cloud, Aggregation, ClusterSet, PointCloud};
use rand::{Rng, SeedableRng};

fn main() -> paramspec::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let mut r = vec![0.0; 10];
            for v in &mut r[..3] {
                *v = rng.random_range(0.0..1.0);
            }
            r
        })
        .collect();
    let cloud = PointCloud::from_rows(&rows)?;
    for how in [Aggregation::Mean, Aggregation::Median] {
        println!("LID ({how:?}, T=20): {:.3}", lid_cloud(&cloud, 20, how)?);
    }

    let answer_sets: [&[&str]; 3] = [
        &["Paris", "paris", "Paris."],
        &["red", "Red", "blue", "blue"],
        &["one", "two", "three", "four"],
    ];
    for answers in answer_sets {
        let clusters = ClusterSet::from_texts(answers.iter().copied());
        println!(
            "{answers:?}: {} clusters, semantic entropy {:.4}",
            clusters.len(),
            clusters.semantic_entropy()?
        );
    }
    Ok(())
}
