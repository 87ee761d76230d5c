//! Drives the command-line layer in-process and shows the record stream.

fn main() {
    let args = ["spatperm", "rho-c", "--set", "beta=0.0795774715459477", "--set", "l_grid=8,16", "--seed", "3"];
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = spatperm::cli::run(args, &mut out, &mut err);
    println!("exit code {code}");
    for line in String::from_utf8_lossy(&out).lines() {
        println!("record: {}", &line[..line.len().min(120)]);
    }
    print!("{}", String::from_utf8_lossy(&err));
}
