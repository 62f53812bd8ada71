use bifurc::continuation::{trace_branches, TraceSettings};
use bifurc::models;

fn main() {
    let m = models::toggle_switch();
    let theta = vec![1.5, 1.5, 0.3, 0.3, 0.5];
    let st = TraceSettings::default();
    let d = trace_branches(&m, &theta, &st).unwrap();
    println!("branches={}", d.branches.len());
    let b = &d.branches[0];
    println!("arc={:.3} samples={}", b.arclength(), b.samples.len());
    for (i, s) in b.samples.iter().enumerate() {
        if i % 60 == 0 || i + 1 == b.samples.len() {
            println!("{i:>5}: p={:.5} u=({:.5},{:.5}) det={:.4} ds={:.4}", s.z.p, s.z.u[0], s.z.u[1], s.det, s.ds);
        }
    }
}
