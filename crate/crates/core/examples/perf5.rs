use lincqa::engine::{consistent_answers, eval_query};
use lincqa::workbench::{fixture, gen_synthetic, SyntheticSpec, time_runs};

fn main() {
    let f = fixture("q1").unwrap();
    for rsize in [4000usize, 20000] {
        let mut cqa_total = 0.0; let mut plain_total = 0.0;
        for seed in 0..20u64 {
            let (db, _) = gen_synthetic(&SyntheticSpec { query_id: "q1".into(), rsize, inratio: 0.0, bsize: 2, seed }).unwrap();
            let (c, _) = time_runs(2, || consistent_answers(&f.query, &db).unwrap());
            let (p, _) = time_runs(2, || eval_query(&f.query, &db).unwrap());
            cqa_total += c; plain_total += p;
        }
        println!("rsize={rsize}: cqa={cqa_total:.1}ms plain={plain_total:.1}ms ratio={:.2}", cqa_total/plain_total);
    }
}
