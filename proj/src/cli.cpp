namespace sca {
namespace {
[[maybe_unused]] int placeholder_cli = 0;
}
} // namespace sca
