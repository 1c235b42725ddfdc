use lincqa::engine::consistent_answers;
use lincqa::workbench::*;

fn main() {
    for (id, b, c, d) in [("2path", 80, 80, None), ("3path", 40, 40, Some(40))] {
        let f = fixture(id).unwrap();
        let query = if id == "2path" { PathQuery::TwoPath } else { PathQuery::ThreePath };
        let mut prev = 0.0f64;
        for n in [100_000usize, 200_000, 400_000, 800_000] {
            let spec = WorstCaseSpec { query, a: 120, b, c, d, n };
            let db = gen_worst_case(&spec).unwrap();
            let (ms, _) = time_runs(5, || consistent_answers(&f.query, &db).unwrap());
            let ratio = if prev > 0.0 { ms / prev } else { 0.0 };
            println!("{id} N={n}: cqa_avg4={ms:.0}ms ratio={ratio:.3}");
            prev = ms;
        }
    }
}
