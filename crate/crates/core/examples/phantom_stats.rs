//! Generates an imbalanced phantom and reports its class distribution.

use reco_kd::volume::{class_stats, generate_phantom, ClassSpec, PhantomSpec, ShapeKind};
use reco_kd::Result;

fn main() -> Result<()> {
    let spec = PhantomSpec {
        shape: [32, 32, 32],
        classes: vec![
            ClassSpec {
                target_fraction: 0.08,
                shape_kind: ShapeKind::Ellipsoid,
            },
            ClassSpec {
                target_fraction: 0.03,
                shape_kind: ShapeKind::Shell,
            },
            ClassSpec {
                target_fraction: 0.004,
                shape_kind: ShapeKind::Sphere,
            },
        ],
        noise_sigma: 0.2,
        modalities: 1,
        class_means: None,
    };
    let (_, labels) = generate_phantom(7, &spec)?;
    let stats = class_stats(&labels);
    print!("{}", stats.to_csv());
    println!("background fraction {:.4}", stats.background_fraction);
    println!("largest / smallest foreground class {}", stats.foreground_ratio);
    Ok(())
}
