#include <cstdio>

int main() {
  std::printf("flowfactor: placeholder\n");
  return 0;
}
