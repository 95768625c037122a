// Placeholder; the real CLI lands once the pipeline modules exist.
int main() { return 0; }
