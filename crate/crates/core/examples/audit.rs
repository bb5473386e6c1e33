//! What colluding parties can link. Twenty riders share two fare classes;
//! a twenty-first rides the only three-hop route and stands out by fare.

use blindfare::audit::{coalition_link, Coalition, LinkKind, LinkOptions};
use blindfare::sim::review::review;
use blindfare::sim::{run, Options, Scenario};

fn script(with_outlier: bool) -> String {
    let mut s = String::from(
        "group tiny
net station A pto metro
net station B pto metro
net station C pto metro
net station D pto metro
net link A B 8000 10 20
net link B C 5000 5 15
net link C D 9000 10 20
fares unit 150 ceiling 600
actor pto metro
actor inspector ivan metro
",
    );
    let mut riders: Vec<(String, &str)> = (0..20).map(|i| (format!("r{i}"), if i % 2 == 0 { "A B" } else { "A B C" })).collect();
    if with_outlier {
        riders.push(("odd".into(), "A B C D"));
    }
    for (i, (name, _)) in riders.iter().enumerate() {
        s.push_str(&format!("actor user {name} 10.1.0.{i}\n"));
    }
    for (name, route) in &riders {
        s.push_str(&format!("{name} buy {route}\n"));
    }
    s.push_str("clock advance 30\n");
    for (name, _) in &riders {
        s.push_str(&format!("ivan inspect {name} A B\n"));
    }
    s
}

fn main() {
    for outlier in [false, true] {
        let out = run(&Scenario::parse(&script(outlier)).unwrap(), Options::default());
        let r = coalition_link(&out.knowledge, &Coalition::all(), &LinkOptions::default());
        println!(
            "outlier={outlier}: protocol leaks {}, value correlations {}",
            r.count(LinkKind::ProtocolLeak),
            r.count(LinkKind::ValueCorrelation)
        );
        if outlier {
            print!("{}", review(&out.trace.text()).unwrap());
        }
    }
}
