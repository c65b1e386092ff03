#include <cstdio>
int main() { std::puts("pushbox: cli not wired yet"); return 0; }
