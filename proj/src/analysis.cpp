namespace sca {
namespace {
[[maybe_unused]] int placeholder_analysis = 0;
}
} // namespace sca
