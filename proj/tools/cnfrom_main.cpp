#include <iostream>

int main() {
    std::cout << "cnfrom\n";
    return 0;
}
