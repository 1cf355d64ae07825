#include <cstdio>

int main() {
  std::puts("coserve: cli wiring lands with the scenario runner");
  return 0;
}
