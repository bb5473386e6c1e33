//! Gate latency per phase. Pass `production` for the 2048-bit group; the
//! default is the 1024-bit group.

use blindfare::sim::bench;
use blindfare::sim::Group;

fn main() {
    let group = match std::env::args().nth(1).as_deref() {
        Some("production") => Group::Production,
        Some("tiny") => Group::Tiny,
        _ => Group::Sim1024,
    };
    for t in bench::run(group, 11, 1) {
        println!("{t}");
    }
}
