fn main() {
    // Filled in once the core pipeline is complete.
}
