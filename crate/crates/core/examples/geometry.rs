//! Point-cloud kernels on a synthetic target: symmetry plane, ε-graph components, yaw box and
//! chamfer to each planted part.
//!
//! cargo run --release -p partasm --example geometry -- [target_index]

use partasm::geom::{chamfer, component_members, connected_components, detect_symmetry_plane, yaw_obb};
use partasm::harness::SyntheticSuite;

fn main() -> partasm::Result<()> {
    let index: usize = std::env::args().nth(1).map_or(0, |s| s.parse().expect("target index"));
    let suite = SyntheticSuite::desk(0)?;
    let t = &suite.targets[index];
    let cloud = &t.cloud;
    println!("{}: {} points, diagonal {:.4}", t.id, cloud.len(), cloud.diagonal());

    match detect_symmetry_plane(cloud, 0.02 * cloud.diagonal(), 0.9) {
        Some(p) => {
            let n = p.normal();
            let vs = t.plane.map_or(String::new(), |truth| format!(" ({:.2} deg from the planted plane)", p.angle_to(&truth).to_degrees()));
            println!("symmetry plane normal [{:.3}, {:.3}, {:.3}]{vs}", n[0], n[1], n[2]);
        }
        None => println!("no symmetry plane"),
    }
    for tau in [0.02, 0.05, 0.08] {
        let sizes: Vec<usize> = component_members(&connected_components(cloud, tau)).iter().map(Vec::len).collect();
        println!("tau {tau:.2}: {} components, sizes {sizes:?}", sizes.len());
    }
    let b = yaw_obb(cloud);
    println!("yaw box: yaw {:.3} rad, extents [{:.3}, {:.3}, {:.3}]", b.yaw, b.extents[0], b.extents[1], b.extents[2]);
    for p in &t.planted {
        let part = cloud.select(&p.rows.clone().collect::<Vec<_>>())?;
        println!("{:<8} rows {:>3}..{:<3} chamfer to whole target {:.4}", p.part_id, p.rows.start, p.rows.end, chamfer(&part, cloud));
    }
    Ok(())
}
