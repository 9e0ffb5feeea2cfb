//! 16-bit KITTI disparity PNGs: value = raw / 256, raw 0 = no data.

use adsm_stereo::imaging::{decode_kitti_disparity, encode_kitti_disparity, load_kitti_disparity, DisparityMap};
use adsm_stereo::pipeline::write_disparity_png;

fn main() -> adsm_stereo::Result<()> {
    let mut map = DisparityMap::new_invalid(4, 2);
    for (x, d) in [0.0, 1.0 / 256.0, 12.5, 255.99609375].iter().enumerate() {
        map.set(x, 0, *d);
    }
    map.set(0, 1, 0.001);

    let raw = encode_kitti_disparity(&map)?;
    println!("raw row 0: {:?}", &raw.as_raw()[..4]);
    println!("raw row 1: {:?}", &raw.as_raw()[4..]);

    let back = decode_kitti_disparity(&raw);
    for x in 0..4 {
        println!("x={x}: {:?} -> {:?}", map.get(x, 0), back.get(x, 0));
    }
    println!("tiny 0.001 stays valid as {:?}", back.get(0, 1));

    let path = std::env::temp_dir().join("adsm_kitti_codec_example.png");
    write_disparity_png(&path, &back)?;
    let reread = load_kitti_disparity(&path)?;
    println!("file round trip exact: {}", reread == back);
    std::fs::remove_file(&path).ok();

    map.set(1, 1, 300.0);
    match encode_kitti_disparity(&map) {
        Ok(_) => println!("unexpected: 300 px encoded"),
        Err(e) => println!("300 px rejected: {e}"),
    }
    Ok(())
}
