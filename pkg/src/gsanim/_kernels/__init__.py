# Namespace for the optional compiled kernel extension (gsanim._kernels._core).
# Lane selection lives in gsanim.backend; nothing imports _core directly.
