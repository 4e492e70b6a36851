fn main() {
    sumscore::cli::main();
}
