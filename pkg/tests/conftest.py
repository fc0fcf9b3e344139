from hypothesis import settings

# the first call of each compiled kernel pays for JIT compilation
settings.register_profile("atlas", deadline=None, derandomize=True)
settings.load_profile("atlas")
