#include <cstdio>

int main() {
  std::puts("forge: placeholder");
  return 0;
}
