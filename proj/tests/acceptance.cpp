#include "embp/embp.hpp"
int main() { return 0; }
