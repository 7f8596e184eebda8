#include <string>
#include <vector>

#include "opttune/mock_solver.hpp"

int main(int argc, char** argv) {
  return opttune::mock_solver_main(std::vector<std::string>(argv + 1, argv + argc));
}
