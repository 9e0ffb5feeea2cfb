//! Depth from disparity and metric reprojection for a rectified pair.

use adsm_stereo::evaluation::{disparity_to_depth, reproject, CameraGeometry};

fn main() -> adsm_stereo::Result<()> {
    // roughly KITTI: 0.54 m baseline, 721 px focal length
    let geom = CameraGeometry::new(0.54, 721.0)?;
    println!("{:>8} {:>9} {:>9} {:>9}", "d [px]", "z [m]", "x [m]", "y [m]");
    for d in [2.0, 8.0, 35.0, 100.0] {
        let z = disparity_to_depth(d, &geom)?;
        let (x, y) = reproject(120.0, -40.0, z, &geom)?;
        println!("{d:>8.1} {z:>9.3} {x:>9.3} {y:>9.3}");
    }
    match disparity_to_depth(0.0, &geom) {
        Ok(z) => println!("unexpected depth {z}"),
        Err(e) => println!("d = 0: {e}"),
    }
    Ok(())
}
