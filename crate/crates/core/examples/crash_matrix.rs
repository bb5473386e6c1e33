//! Every fault at every message boundary of the bundled matrix scenario,
//! for the honest build and for a build that sends before persisting.

use blindfare::sim::matrix::crash_matrix;
use blindfare::sim::Scenario;

fn main() {
    let s = Scenario::parse(include_str!("../scenarios/matrix.scn")).unwrap();
    for mutant in [false, true] {
        let m = crash_matrix(&s, 1, mutant);
        println!(
            "{}: {} cells (tickets {}, payg {}), {} failed",
            if mutant { "send-before-persist" } else { "honest" },
            m.cells.len(),
            m.count("tickets"),
            m.count("payg"),
            m.failures().count()
        );
        for c in m.failures().take(5) {
            println!("  {} {} {}: {}", c.flow, c.step, c.action, c.violations.first().map_or("", String::as_str));
        }
    }
}
