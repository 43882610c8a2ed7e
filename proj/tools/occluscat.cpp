// CLI stub; subcommands are filled in as the pipeline lands.
#include <cstdio>

int main() {
    std::puts("occluscat: no subcommands wired up yet");
    return 2;
}
