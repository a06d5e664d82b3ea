use std::time::Instant;

use qreg_core::disk::{compare_domains, domain_category, sweep, DiskParams};
use qreg_core::Classification;

#[test]
fn default_sweep_structure() {
    let start = Instant::now();
    let params = DiskParams::new(0.99, 0.1, 10_000, (128, 256));
    let grid = sweep(&params).unwrap();
    println!("sweep took {:?}", start.elapsed());

    let ring = (0..128).min_by(|&a, &b| {
        (params.radius_at(a) - 1.0 / 3.0).abs().total_cmp(&(params.radius_at(b) - 1.0 / 3.0).abs())
    });
    let ring = ring.unwrap();
    assert!((0..256).all(|j| grid.cell(ring, j).class.td == Classification::Converges));

    let counts = compare_domains(&grid);
    println!("{counts:?}");
    assert_eq!(counts.fr_only_diverge, 0);
    assert!(counts.tn_only_diverge > 0);
    for i in 0..128 {
        for j in 0..128 {
            assert_eq!(domain_category(grid.cell(i, j)), domain_category(grid.cell(i, j + 128)));
        }
    }
}
