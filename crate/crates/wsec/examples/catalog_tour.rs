//! Lists the built-in spaces and their closed-form reference values.

fn main() {
    for d in wsec::catalog::all() {
        println!("{:<24} n = {}  {}  truths: {:?}", d.name, d.spec.dim, d.summary, d.truths.present());
    }
}
