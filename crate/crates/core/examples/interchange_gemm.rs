//! Tile matrix multiply end to end and show the fold hoisted above the map.

use pplforge::syntax::print_program;
use pplforge::transform::{strip_mine, tile_program, TileConfig};

fn main() {
    let p = pplforge::corpus::program("gemm").unwrap();
    let cfg = TileConfig::default().tile("m", 4).tile("n", 4).tile("p", 8);
    println!("-- strip-mined\n{}", print_program(&strip_mine(&p, &cfg).unwrap()));
    println!("-- interchanged\n{}", print_program(&tile_program(&p, &cfg).unwrap()));
}
